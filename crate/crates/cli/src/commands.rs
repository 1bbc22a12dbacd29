use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use cir_core::metrics::{alpha_sweep, caption_embedding, default_alpha_grid, evaluate, read_instances, sweep_tsv};
use cir_core::search::write_tsv;
use cir_core::tat::{gen_synthetic, modality_gap, train, AdapterBlob, ExperimentConfig, GapStats};
use cir_core::tsv::{read_exclusions, read_manifest, read_pairs};
use cir_core::{
    batch_top_k, slerp, BalancingScalar, BenchmarkInstance, CaptionMode, CirError, EmbeddingBank, EvalOptions,
    Modality, Protocol, RawBank, SearchOptions, UnitEmbedding, ValidationReport,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{resolve, resolve_list, FileConfig};
use crate::output::{align_tsv, emit, json_line, tsv_provenance};
use crate::{BenchArgs, Cli, Command, ComposeArgs, EvalArgs, GapArgs, SearchArgs, SweepArgs, TrainArgs, ValidateArgs};

struct Ctx {
    file: FileConfig,
    seed: u64,
    pretty: bool,
}

pub fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let seed = resolve(cli.seed, &file, "seed", 42)?;
    let ctx = Ctx {
        file,
        seed,
        pretty: cli.pretty,
    };
    match &cli.command {
        Command::Validate(a) => validate(&ctx, a),
        Command::Compose(a) => compose(&ctx, a).map(|_| ExitCode::SUCCESS),
        Command::Search(a) => search(&ctx, a).map(|_| ExitCode::SUCCESS),
        Command::Eval(a) => eval(&ctx, a).map(|_| ExitCode::SUCCESS),
        Command::SweepAlpha(a) => sweep(&ctx, a).map(|_| ExitCode::SUCCESS),
        Command::TrainTat(a) => train_tat(&ctx, a).map(|_| ExitCode::SUCCESS),
        Command::Gap(a) => gap(&ctx, a).map(|_| ExitCode::SUCCESS),
    }
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn load_bank(path: &Path) -> anyhow::Result<EmbeddingBank> {
    EmbeddingBank::load(path).with_context(|| format!("loading bank {}", path.display()))
}

fn at_line(line: usize) -> impl Fn(CirError) -> CirError {
    move |e| CirError::AtLine {
        line,
        source: Box::new(e),
    }
}

fn same_dim(expected: &EmbeddingBank, other: &EmbeddingBank) -> Result<(), CirError> {
    if expected.dim() != other.dim() {
        return Err(CirError::DimMismatch {
            expected: expected.dim(),
            found: other.dim(),
        });
    }
    Ok(())
}

/// `<path>.json` next to a binary artifact.
fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Serialize)]
struct ManifestCheck {
    entries: usize,
    missing_from_bank: Vec<String>,
    not_in_manifest: Vec<String>,
}

fn validate(ctx: &Ctx, a: &ValidateArgs) -> anyhow::Result<ExitCode> {
    #[derive(Serialize)]
    struct Body<'a> {
        modality: Modality,
        #[serde(flatten)]
        report: &'a ValidationReport,
        #[serde(skip_serializing_if = "Option::is_none")]
        manifest: Option<ManifestCheck>,
    }

    let raw = RawBank::load(&a.bank).with_context(|| format!("reading bank {}", a.bank.display()))?;
    let report = raw.validate();
    let manifest = match &a.manifest {
        Some(path) => {
            let entries = read_manifest(open(path)?).with_context(|| format!("reading manifest {}", path.display()))?;
            let in_bank: HashSet<&str> = raw.records.iter().map(|(id, _)| id.as_str()).collect();
            let listed: HashSet<&str> = entries.iter().map(|e| e.id.as_str()).collect();
            Some(ManifestCheck {
                entries: entries.len(),
                missing_from_bank: entries
                    .iter()
                    .filter(|e| !in_bank.contains(e.id.as_str()))
                    .map(|e| e.id.clone())
                    .collect(),
                not_in_manifest: raw
                    .records
                    .iter()
                    .filter(|(id, _)| !listed.contains(id.as_str()))
                    .map(|(id, _)| id.clone())
                    .collect(),
            })
        }
        None => None,
    };
    let config = json!({
        "command": "validate",
        "seed": ctx.seed,
        "bank": show(&a.bank),
        "manifest": a.manifest.as_deref().map(show),
    });

    for issue in &report.errors {
        eprintln!("invalid entry `{}`: {}", issue.id, issue.detail);
    }
    let mut ok = !report.has_errors();
    if let Some(m) = &manifest {
        for id in &m.missing_from_bank {
            eprintln!("manifest id `{id}` has no bank entry");
        }
        for id in &m.not_in_manifest {
            eprintln!("bank id `{id}` is not in the manifest");
        }
        ok &= m.missing_from_bank.is_empty() && m.not_in_manifest.is_empty();
    }

    if ctx.pretty {
        let mut s = format!(
            "{}: {} entries, dim {}, modality {:?}\nmax norm deviation {:.3e}, {} NaN, {} dim mismatches\n{} errors, {} warnings\n",
            a.bank.display(),
            report.count,
            report.dim,
            raw.modality,
            report.max_norm_deviation,
            report.nan_count,
            report.dim_mismatches,
            report.errors.len(),
            report.warnings.len(),
        );
        for w in &report.warnings {
            s.push_str(&format!("warning `{}`: {}\n", w.id, w.detail));
        }
        s.push_str(if ok { "ok\n" } else { "FAILED\n" });
        emit(None, &s)?;
    } else {
        let body = Body {
            modality: raw.modality,
            report: &report,
            manifest,
        };
        emit(None, &json_line(&config, &body)?)?;
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn compose(ctx: &Ctx, a: &ComposeArgs) -> anyhow::Result<()> {
    #[derive(Serialize)]
    struct Body {
        out: String,
        count: usize,
        dim: usize,
    }

    let alpha = resolve(a.alpha, &ctx.file, "alpha", Protocol::GenericRecall.default_alpha())?;
    let alpha = BalancingScalar::new(alpha)?;
    let images = load_bank(&a.images)?;
    let texts = load_bank(&a.texts)?;
    same_dim(&images, &texts)?;
    let pairs = read_pairs(open(&a.pairs)?).with_context(|| format!("reading pairs {}", a.pairs.display()))?;
    if pairs.is_empty() {
        return Err(CirError::EmptyPairs.into());
    }
    let mut out = EmbeddingBank::new(images.dim(), Modality::Unspecified);
    for p in &pairs {
        let at = at_line(p.line);
        let v = images.get(&p.image_id).map_err(&at)?;
        let w = texts.get(&p.text_id).map_err(&at)?;
        out.insert(p.query_id.clone(), &slerp(&v, &w, alpha).map_err(&at)?)
            .map_err(&at)?;
    }
    out.save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;

    let config = json!({
        "command": "compose",
        "seed": ctx.seed,
        "images": show(&a.images),
        "texts": show(&a.texts),
        "pairs": show(&a.pairs),
        "alpha": alpha.get(),
        "out": show(&a.out),
    });
    let body = Body {
        out: show(&a.out),
        count: out.len(),
        dim: out.dim(),
    };
    let line = json_line(&config, &body)?;
    emit(Some(&sidecar(&a.out)), &line)?;
    if ctx.pretty {
        emit(
            None,
            &format!(
                "wrote {} composed queries (dim {}) to {}\n",
                body.count, body.dim, body.out
            ),
        )
    } else {
        emit(None, &line)
    }
}

fn search(ctx: &Ctx, a: &SearchArgs) -> anyhow::Result<()> {
    let k = resolve(a.k, &ctx.file, "k", 10)?;
    let shards = match a.shards {
        Some(s) => Some(s),
        None => ctx.file.get("shards")?,
    };
    let queries = load_bank(&a.queries)?;
    let gallery = load_bank(&a.gallery)?;
    let exclude: HashMap<String, HashSet<String>> = match &a.exclude {
        Some(p) => read_exclusions(open(p)?).with_context(|| format!("reading exclusions {}", p.display()))?,
        None => HashMap::new(),
    };
    let q: Vec<(String, UnitEmbedding)> = (0..queries.len())
        .map(|i| (queries.ids()[i].clone(), queries.embedding_at(i)))
        .collect();
    let lists = batch_top_k(&q, &gallery, k, &exclude, SearchOptions { shards })?;

    let mut body = Vec::new();
    write_tsv(&lists, &mut body)?;
    let body = String::from_utf8(body)?;
    let header = "query_id\trank\tgallery_id\tscore\n";
    if ctx.pretty {
        return emit(a.out.as_deref(), &align_tsv(&format!("{header}{body}")));
    }
    let config = json!({
        "command": "search",
        "seed": ctx.seed,
        "queries": show(&a.queries),
        "gallery": show(&a.gallery),
        "k": k,
        "exclude": a.exclude.as_deref().map(show),
        "shards": shards,
    });
    emit(
        a.out.as_deref(),
        &format!("{}# {header}{body}", tsv_provenance(&config)),
    )
}

struct Bench {
    protocol: Protocol,
    images: EmbeddingBank,
    texts: EmbeddingBank,
    gallery: EmbeddingBank,
    instances: Vec<BenchmarkInstance>,
    options: EvalOptions,
    config: serde_json::Map<String, Value>,
}

/// Loads banks and instances, resolves options, and checks every instance
/// against the protocol and the banks, reporting the offending line.
fn load_bench(ctx: &Ctx, command: &str, b: &BenchArgs) -> anyhow::Result<Bench> {
    let file = &ctx.file;
    let protocol: Protocol = resolve(b.protocol.clone(), file, "protocol", "generic_recall".into())?.parse()?;
    let ks = resolve_list(b.ks.clone(), file, "ks")?.unwrap_or_else(|| protocol.default_ks());
    let subset_ks =
        resolve_list(b.subset_ks.clone(), file, "subset_ks")?.unwrap_or_else(|| protocol.default_subset_ks());
    let caption_mode: CaptionMode = resolve(b.caption_mode.clone(), file, "caption_mode", "primary".into())?.parse()?;
    let exclude_reference = match b.exclude_reference {
        Some(x) => Some(x),
        None => file.get("exclude_reference")?,
    };
    let shards = match b.shards {
        Some(s) => Some(s),
        None => file.get("shards")?,
    };

    let images = load_bank(&b.images)?;
    let texts = load_bank(&b.texts)?;
    same_dim(&images, &texts)?;
    let gallery = match &b.gallery {
        Some(p) => load_bank(p)?,
        None => images.clone(),
    };
    same_dim(&images, &gallery)?;

    let lines =
        read_instances(open(&b.instances)?).with_context(|| format!("reading instances {}", b.instances.display()))?;
    for (line, inst) in &lines {
        let at = at_line(*line);
        protocol.check_instance(inst).map_err(&at)?;
        images.get(&inst.reference_id).map_err(&at)?;
        caption_embedding(&texts, inst, caption_mode).map_err(&at)?;
        let listed = inst.target_ids.iter().chain(inst.subset_ids.iter().flatten());
        if let Some(id) = listed.into_iter().find(|id| !gallery.contains(id)) {
            return Err(at(CirError::UnknownId(id.clone())).into());
        }
    }
    let instances: Vec<BenchmarkInstance> = lines.into_iter().map(|(_, i)| i).collect();

    let json = json!({
        "command": command,
        "seed": ctx.seed,
        "protocol": protocol,
        "instances": show(&b.instances),
        "images": show(&b.images),
        "texts": show(&b.texts),
        "gallery": show(b.gallery.as_deref().unwrap_or(&b.images)),
        "ks": ks,
        "subset_ks": subset_ks,
        "caption_mode": caption_mode,
        "exclude_reference": exclude_reference,
        "shards": shards,
    });
    let Value::Object(config) = json else {
        unreachable!("json! object literal")
    };
    Ok(Bench {
        protocol,
        images,
        texts,
        gallery,
        instances,
        options: EvalOptions {
            ks: Some(ks),
            subset_ks: Some(subset_ks).filter(|s| !s.is_empty()),
            exclude_reference,
            caption_mode,
            search: SearchOptions { shards },
        },
        config,
    })
}

fn eval(ctx: &Ctx, a: &EvalArgs) -> anyhow::Result<()> {
    let mut b = load_bench(ctx, "eval", &a.bench)?;
    let alpha = resolve(a.alpha, &ctx.file, "alpha", b.protocol.default_alpha())?;
    let alpha = BalancingScalar::new(alpha)?;
    let report = evaluate(
        b.protocol,
        &b.images,
        &b.texts,
        &b.gallery,
        &b.instances,
        alpha,
        &b.options,
    )?;
    if ctx.pretty {
        return emit(a.bench.out.as_deref(), &report.to_table());
    }
    b.config.insert("alpha".into(), json!(alpha.get()));
    emit(a.bench.out.as_deref(), &json_line(&Value::Object(b.config), &report)?)
}

fn sweep(ctx: &Ctx, a: &SweepArgs) -> anyhow::Result<()> {
    let mut b = load_bench(ctx, "sweep-alpha", &a.bench)?;
    let alphas = resolve_list(a.alphas.clone(), &ctx.file, "alphas")?.unwrap_or_else(default_alpha_grid);
    let reports = alpha_sweep(
        b.protocol,
        &b.images,
        &b.texts,
        &b.gallery,
        &b.instances,
        &alphas,
        &b.options,
    )?;
    let table = sweep_tsv(&reports);
    if ctx.pretty {
        return emit(a.bench.out.as_deref(), &align_tsv(&table));
    }
    b.config.insert("alphas".into(), json!(alphas));
    emit(
        a.bench.out.as_deref(),
        &format!("{}{table}", tsv_provenance(&Value::Object(b.config))),
    )
}

fn train_tat(ctx: &Ctx, a: &TrainArgs) -> anyhow::Result<()> {
    #[derive(Serialize)]
    struct BlobInfo {
        tower: &'static str,
        path: String,
        d_in: usize,
        d_out: usize,
        rank: usize,
        lora_alpha: f32,
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        anchoring: &'static str,
        epochs: usize,
        initial_loss: f64,
        final_loss: f64,
        initial: &'a GapStats,
        #[serde(rename = "final")]
        last: &'a GapStats,
        initial_slerp_r1: f64,
        final_slerp_r1: f64,
        blobs: Vec<BlobInfo>,
        history: String,
    }

    let mut cfg = ExperimentConfig::default();
    for (k, v) in ctx.file.training_entries() {
        cfg.set(k, v)?;
    }
    for s in &a.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CirError::BadConfig(format!("--set `{s}`: expected KEY=VALUE")))?;
        if k.trim() == "seed" {
            return Err(CirError::BadConfig("set the seed with --seed or CIR_SEED".into()).into());
        }
        cfg.set(k, v)?;
    }
    if let Some(x) = &a.anchoring {
        cfg.set("anchoring", x)?;
    }
    if let Some(n) = a.epochs {
        cfg.train.epochs = n;
    }
    cfg.set("seed", &ctx.seed.to_string())?;
    cfg.validate()?;

    let data = gen_synthetic(&cfg.data)?;
    let outcome = train(&cfg.train, &data)?;

    let config = json!({
        "command": "train-tat",
        "seed": ctx.seed,
        "out_dir": show(&a.out_dir),
        "experiment": cfg,
    });
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut blobs = Vec::new();
    for (name, tower) in outcome.trained_towers() {
        let blob = AdapterBlob::from_params(tower);
        let path = a.out_dir.join(format!("{name}_adapter.cta"));
        std::fs::write(&path, blob.to_bytes()).with_context(|| format!("writing {}", path.display()))?;
        let info = BlobInfo {
            tower: name,
            path: show(&path),
            d_in: blob.d_in,
            d_out: blob.d_out,
            rank: blob.rank,
            lora_alpha: blob.lora_alpha,
        };
        emit(Some(&sidecar(&path)), &json_line(&config, &info)?)?;
        blobs.push(info);
    }
    let history_path = a.out_dir.join("history.jsonl");
    let mut history = serde_json::to_string(&json!({ "config": config }))?;
    history.push('\n');
    for rec in &outcome.history {
        history.push_str(&serde_json::to_string(rec)?);
        history.push('\n');
    }
    emit(Some(&history_path), &history)?;

    let (first, last) = (outcome.initial(), outcome.last());
    if ctx.pretty {
        let mut t = String::from("epoch\tloss\tpaired_cos\tpaired_angle\tslerp_R@1\n");
        for r in &outcome.history {
            t.push_str(&format!(
                "{}\t{:.6}\t{:.4}\t{:.4}\t{:.1}\n",
                r.epoch, r.loss, r.held_out.mean_paired_cosine, r.held_out.mean_paired_angle, r.held_out_slerp_r1
            ));
        }
        return emit(
            None,
            &format!("anchoring {}\n{}", outcome.anchoring.name(), align_tsv(&t)),
        );
    }
    let summary = Summary {
        anchoring: outcome.anchoring.name(),
        epochs: cfg.train.epochs,
        initial_loss: first.loss,
        final_loss: last.loss,
        initial: &first.held_out,
        last: &last.held_out,
        initial_slerp_r1: first.held_out_slerp_r1,
        final_slerp_r1: last.held_out_slerp_r1,
        blobs,
        history: show(&history_path),
    };
    emit(None, &json_line(&config, &summary)?)
}

fn gap(ctx: &Ctx, a: &GapArgs) -> anyhow::Result<()> {
    let images = load_bank(&a.images)?;
    let texts = load_bank(&a.texts)?;
    same_dim(&images, &texts)?;
    let pairs = read_pairs(open(&a.pairs)?).with_context(|| format!("reading pairs {}", a.pairs.display()))?;
    if pairs.is_empty() {
        return Err(CirError::EmptyPairs.into());
    }
    let mut v = Vec::with_capacity(pairs.len());
    let mut w = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let at = at_line(p.line);
        v.push(images.get(&p.image_id).map_err(&at)?);
        w.push(texts.get(&p.text_id).map_err(&at)?);
    }
    let stats = modality_gap(&v, &w, ctx.seed)?;
    if ctx.pretty {
        let unpaired = stats
            .mean_unpaired_cosine
            .map_or("n/a".to_string(), |x| format!("{x:.6}"));
        return emit(
            a.out.as_deref(),
            &format!(
                "pairs            {}\npaired cosine    {:.6}\nunpaired cosine  {unpaired}\npaired angle     {:.6} rad\n",
                stats.n_pairs, stats.mean_paired_cosine, stats.mean_paired_angle
            ),
        );
    }
    let config = json!({
        "command": "gap",
        "seed": ctx.seed,
        "images": show(&a.images),
        "texts": show(&a.texts),
        "pairs": show(&a.pairs),
    });
    emit(a.out.as_deref(), &json_line(&config, &stats)?)
}
