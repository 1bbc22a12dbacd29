//! Browser demo: each export takes plain numbers and returns a JSON string
//! for the page script to draw.
//!
//! The `*_json` functions hold the logic and run natively too; the
//! `#[wasm_bindgen]` wrappers only convert errors into JS exceptions.

use cir_core::metrics::{alpha_sweep, default_alpha_grid};
use cir_core::synthetic::arc_benchmark;
use cir_core::tat::{gen_synthetic, train, ExperimentConfig};
use cir_core::{angle, geometry::nlerp, normalize, slerp, BalancingScalar, EvalOptions, Protocol};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Largest synthetic sizes the page may request, to keep the tab responsive.
pub const MAX_QUERIES: usize = 500;
pub const MAX_DISTRACTORS: usize = 20_000;
pub const MAX_EPOCHS: usize = 200;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Slerp between two planar directions: the full arc sampled at `steps + 1`
/// points, the composed point at `alpha`, and the normalized linear mix at
/// the same `alpha` for comparison.
pub fn arc_json(ax: f64, ay: f64, bx: f64, by: f64, alpha: f64, steps: usize) -> Result<String, String> {
    let v = normalize(&[ax, ay]).map_err(err)?;
    let w = normalize(&[bx, by]).map_err(err)?;
    let a = BalancingScalar::new(alpha).map_err(err)?;
    let steps = steps.clamp(1, 1000);
    let arc = (0..=steps)
        .map(|i| {
            let t = BalancingScalar::new(i as f64 / steps as f64)?;
            Ok(slerp(&v, &w, t)?.into_vec())
        })
        .collect::<cir_core::Result<Vec<_>>>()
        .map_err(err)?;
    let composed = slerp(&v, &w, a).map_err(err)?;
    let linear = nlerp(&v, &w, a).map_err(err)?;
    let theta = angle(&v, &w).map_err(err)?;
    // Angle travelled from v, as a fraction of the full arc.
    let travelled = |p: &[f64]| {
        let cos = (p[0] * v.as_slice()[0] + p[1] * v.as_slice()[1]).clamp(-1.0, 1.0);
        if theta > 0.0 {
            cos.acos() / theta
        } else {
            0.0
        }
    };
    Ok(json!({
        "v": v.as_slice(),
        "w": w.as_slice(),
        "angle": theta,
        "arc": arc,
        "slerp": composed.as_slice(),
        "nlerp": linear.as_slice(),
        "slerp_fraction": travelled(composed.as_slice()),
        "nlerp_fraction": travelled(linear.as_slice()),
    })
    .to_string())
}

/// Recall@1 and Recall@5 over the default alpha grid on a synthetic
/// benchmark whose targets sit at `construction_alpha` along each arc.
pub fn sweep_json(
    n_queries: usize,
    dim: usize,
    construction_alpha: f64,
    n_distractors: usize,
    seed: u64,
) -> Result<String, String> {
    if n_queries > MAX_QUERIES || n_distractors > MAX_DISTRACTORS {
        return Err(format!(
            "at most {MAX_QUERIES} queries and {MAX_DISTRACTORS} distractors"
        ));
    }
    let b = arc_benchmark(n_queries, dim, construction_alpha, n_distractors, seed).map_err(err)?;
    let options = EvalOptions {
        ks: Some(vec![1, 5]),
        ..Default::default()
    };
    let grid = default_alpha_grid();
    let reports = alpha_sweep(
        Protocol::GenericRecall,
        &b.image_bank,
        &b.text_bank,
        &b.gallery,
        &b.instances,
        &grid,
        &options,
    )
    .map_err(err)?;
    let rows: Vec<_> = reports
        .iter()
        .map(|r| json!({ "alpha": r.alpha, "r1": r.per_k_scores[&1], "r5": r.per_k_scores[&5] }))
        .collect();
    Ok(json!({
        "construction_alpha": construction_alpha,
        "gallery_size": b.gallery.len(),
        "rows": rows,
    })
    .to_string())
}

/// Trains adapters on the default synthetic pairs and returns the per-epoch
/// held-out history.
pub fn train_json(anchoring: &str, epochs: usize, seed: u64) -> Result<String, String> {
    if epochs > MAX_EPOCHS {
        return Err(format!("at most {MAX_EPOCHS} epochs"));
    }
    let mut cfg = ExperimentConfig::default();
    cfg.set("anchoring", anchoring).map_err(err)?;
    cfg.set("seed", &seed.to_string()).map_err(err)?;
    cfg.train.epochs = epochs;
    cfg.validate().map_err(err)?;
    let data = gen_synthetic(&cfg.data).map_err(err)?;
    let outcome = train(&cfg.train, &data).map_err(err)?;
    Ok(json!({
        "anchoring": outcome.anchoring.name(),
        "history": outcome.history,
    })
    .to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn slerp_arc(ax: f64, ay: f64, bx: f64, by: f64, alpha: f64, steps: usize) -> Result<String, JsValue> {
    js(arc_json(ax, ay, bx, by, alpha, steps))
}

#[wasm_bindgen]
pub fn sweep_alpha(
    n_queries: usize,
    dim: usize,
    construction_alpha: f64,
    n_distractors: usize,
    seed: u32,
) -> Result<String, JsValue> {
    js(sweep_json(
        n_queries,
        dim,
        construction_alpha,
        n_distractors,
        seed.into(),
    ))
}

#[wasm_bindgen]
pub fn train_tat(anchoring: &str, epochs: usize, seed: u32) -> Result<String, JsValue> {
    js(train_json(anchoring, epochs, seed.into()))
}
