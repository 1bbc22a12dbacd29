//! Runs the synthetic anchoring comparison and prints per-epoch statistics.
//!
//!   cargo run --release -p cir-core --example tat_experiment [key=value ...]

use cir_core::tat::{gen_synthetic, train, Anchoring, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::default();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').ok_or("arguments are key=value")?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    let data = gen_synthetic(&cfg.data)?;
    for anchoring in [Anchoring::TextAnchor, Anchoring::NoneAnchor, Anchoring::ImageAnchor] {
        let mut tc = cfg.train.clone();
        tc.anchoring = anchoring;
        let start = std::time::Instant::now();
        let out = train(&tc, &data)?;
        println!("== {} ({:.2?})", anchoring.name(), start.elapsed());
        for r in &out.history {
            println!(
                "epoch {:>3}  loss {:>8.4}  paired {:.4}  unpaired {:>7.4}  slerp R@1 {:>6.2}",
                r.epoch,
                r.loss,
                r.held_out.mean_paired_cosine,
                r.held_out.mean_unpaired_cosine.unwrap_or(f64::NAN),
                r.held_out_slerp_r1
            );
        }
    }
    Ok(())
}
