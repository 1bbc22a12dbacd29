//! `cir`: composed image retrieval from embedding banks.
//!
//! Exit codes: 0 success, 1 domain error, 2 malformed input.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use cir_core::CirError;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "cir",
    version,
    about = "Composed image retrieval with spherical interpolation"
)]
pub struct Cli {
    /// `key = value` file of run options. Precedence: flags > env > file > defaults.
    #[arg(long, global = true, env = "CIR_CONFIG")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice (default 42).
    #[arg(long, global = true, env = "CIR_SEED")]
    pub seed: Option<u64>,
    /// Render a human-readable table instead of JSON/TSV.
    #[arg(long, global = true)]
    pub pretty: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check a CEB1 bank against its invariants.
    Validate(ValidateArgs),
    /// Slerp-compose (image, text) pairs into a new bank.
    Compose(ComposeArgs),
    /// Exact top-k search of a query bank against a gallery bank.
    Search(SearchArgs),
    /// Evaluate a benchmark instance file under a protocol.
    Eval(EvalArgs),
    /// Evaluate over a grid of balancing scalars.
    SweepAlpha(SweepArgs),
    /// Train a text-anchored adapter on synthetic pairs.
    TrainTat(TrainArgs),
    /// Modality-gap statistics of paired image and text embeddings.
    Gap(GapArgs),
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    pub bank: PathBuf,
    /// Extractor manifest (`id \t path-or-caption`) whose ids the bank must match.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ComposeArgs {
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub texts: PathBuf,
    /// `[query_id \t] image_id \t text_id` rows.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Weight of the text embedding (default 0.8).
    #[arg(long, env = "CIR_ALPHA")]
    pub alpha: Option<f64>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub gallery: PathBuf,
    /// Hits per query (default 10).
    #[arg(long, short)]
    pub k: Option<usize>,
    /// `query_id \t gallery_id` rows to drop from that query's results.
    #[arg(long)]
    pub exclude: Option<PathBuf>,
    #[arg(long, env = "CIR_SHARDS")]
    pub shards: Option<usize>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// generic_recall, cirr, circo or fashioniq (default generic_recall).
    #[arg(long, env = "CIR_PROTOCOL")]
    pub protocol: Option<String>,
    /// JSON-lines benchmark instances.
    #[arg(long)]
    pub instances: PathBuf,
    /// Bank holding the reference images.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub texts: PathBuf,
    /// Retrieval gallery; defaults to the image bank.
    #[arg(long)]
    pub gallery: Option<PathBuf>,
    /// Comma-separated K list; defaults to the protocol's.
    #[arg(long, value_delimiter = ',')]
    pub ks: Vec<usize>,
    /// Comma-separated K list for the CIRR subset metric.
    #[arg(long, value_delimiter = ',')]
    pub subset_ks: Vec<usize>,
    /// primary, average, or a 0-based caption index.
    #[arg(long)]
    pub caption_mode: Option<String>,
    /// Override every instance's exclude_reference flag.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub exclude_reference: Option<bool>,
    #[arg(long, env = "CIR_SHARDS")]
    pub shards: Option<usize>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub bench: BenchArgs,
    /// Balancing scalar; defaults to the protocol's.
    #[arg(long, env = "CIR_ALPHA")]
    pub alpha: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub bench: BenchArgs,
    /// Comma-separated grid (default 0, 0.1, ..., 1).
    #[arg(long, value_delimiter = ',')]
    pub alphas: Vec<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory for adapter blobs and the training history.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// text_anchor, image_anchor or none_anchor.
    #[arg(long)]
    pub anchoring: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Extra `key=value` training settings, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Args, Debug)]
pub struct GapArgs {
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub texts: PathBuf,
    /// `[query_id \t] image_id \t text_id` rows.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

/// 2 when the first typed error in the chain is a malformed-input error,
/// otherwise 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<CirError>())
        .map_or(1, |e| if e.is_malformed_input() { 2 } else { 1 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
