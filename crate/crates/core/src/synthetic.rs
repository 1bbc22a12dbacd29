//! Seeded composed-retrieval benchmarks with a known answer.
//!
//! For each query a random reference image `v` and caption `w` are drawn, and
//! the gallery receives the points of the great circle from `v` to `w` at
//! every alpha of the default grid plus the construction alpha. The target is
//! the point at the construction alpha, so composing at exactly that alpha
//! retrieves it at rank 1, while any other grid alpha lands on a distractor
//! from the same arc.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bank::{EmbeddingBank, Modality};
use crate::error::{CirError, Result};
use crate::geometry::{angle, normalize, slerp, BalancingScalar, UnitEmbedding};
use crate::metrics::{default_alpha_grid, BenchmarkInstance};

#[derive(Debug, Clone)]
pub struct ArcBenchmark {
    pub image_bank: EmbeddingBank,
    pub text_bank: EmbeddingBank,
    pub gallery: EmbeddingBank,
    pub instances: Vec<BenchmarkInstance>,
    pub construction_alpha: f64,
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Result<UnitEmbedding> {
    let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    normalize(&raw)
}

/// Builds an [`ArcBenchmark`] with `n_queries` queries and `n_distractors`
/// extra random gallery images.
pub fn arc_benchmark(
    n_queries: usize,
    dim: usize,
    construction_alpha: f64,
    n_distractors: usize,
    seed: u64,
) -> Result<ArcBenchmark> {
    if n_queries == 0 {
        return Err(CirError::NoInstances);
    }
    if dim < 2 {
        return Err(CirError::BadConfig("synthetic benchmark needs dim >= 2".into()));
    }
    let target_alpha = BalancingScalar::new(construction_alpha)?;
    let mut alphas = default_alpha_grid();
    if !alphas.contains(&construction_alpha) {
        alphas.push(construction_alpha);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image_bank = EmbeddingBank::new(dim, Modality::Image);
    let mut text_bank = EmbeddingBank::new(dim, Modality::Text);
    let mut gallery = EmbeddingBank::new(dim, Modality::Image);
    let mut instances = Vec::with_capacity(n_queries);
    for q in 0..n_queries {
        // Keep the arc well away from both degenerate ends.
        let (v, w) = loop {
            let v = random_unit(dim, &mut rng)?;
            let w = random_unit(dim, &mut rng)?;
            let theta = angle(&v, &w)?;
            if (0.5..=std::f64::consts::PI - 0.5).contains(&theta) {
                break (v, w);
            }
        };
        let ref_id = format!("ref-{q:04}");
        let cap_id = format!("cap-{q:04}");
        let mut target = None;
        for (i, &a) in alphas.iter().enumerate() {
            let id = format!("arc-{q:04}-{i:02}");
            gallery.insert(id.clone(), &slerp(&v, &w, BalancingScalar::new(a)?)?)?;
            if a == target_alpha.get() {
                target = Some(id);
            }
        }
        image_bank.insert(ref_id.clone(), &v)?;
        text_bank.insert(cap_id.clone(), &w)?;
        let target = target.expect("construction alpha is on the arc");
        instances.push(BenchmarkInstance::new(
            format!("q-{q:04}"),
            ref_id,
            cap_id,
            vec![target],
        )?);
    }
    for d in 0..n_distractors {
        gallery.insert(format!("noise-{d:05}"), &random_unit(dim, &mut rng)?)?;
    }
    Ok(ArcBenchmark {
        image_bank,
        text_bank,
        gallery,
        instances,
        construction_alpha,
    })
}
