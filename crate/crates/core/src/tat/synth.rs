//! Seeded synthetic image/text pairs with a controlled modality gap.
//!
//! Latent concepts are unit vectors in a random `latent_dim`-dimensional
//! subspace. Text anchors are `normalize(c + σn)`. Image inputs are
//! `R · normalize(c + σn')`, where `R` rotates every vector of the concept
//! subspace by exactly `gap_rotation_angle` (planes paired inside the
//! subspace) and fixes its orthogonal complement. `R - I` therefore has rank
//! `latent_dim`, so an adapter of at least that rank can undo it.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{CirError, Result};
use crate::geometry::{normalize, UnitEmbedding};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticConfig {
    pub n_pairs: usize,
    pub dim: usize,
    /// Must be even and at most `dim`.
    pub latent_dim: usize,
    pub gap_rotation_angle: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_pairs: 1000,
            dim: 32,
            latent_dim: 4,
            gap_rotation_angle: std::f64::consts::FRAC_PI_3,
            noise_sigma: 0.05,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CirError::BadConfig(m.to_string()));
        if self.dim < 4 {
            return bad("synthetic dim must be at least 4");
        }
        if self.latent_dim < 2 || !self.latent_dim.is_multiple_of(2) || self.latent_dim > self.dim {
            return bad("latent_dim must be even, at least 2, and at most dim");
        }
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&self.gap_rotation_angle) {
            return bad("gap_rotation_angle must lie in [0, π/2]");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative");
        }
        if self.n_pairs < 5 {
            return bad("n_pairs must be at least 5 to leave a held-out split");
        }
        Ok(())
    }
}

/// One split of paired data. `reference_inputs` are second, independently
/// noised image views of the same concepts, used as composed-query references.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSplit {
    pub image_inputs: Vec<Vec<f64>>,
    pub reference_inputs: Vec<Vec<f64>>,
    pub text_anchors: Vec<UnitEmbedding>,
}

impl PairSplit {
    pub fn len(&self) -> usize {
        self.image_inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_inputs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub config: SyntheticConfig,
    pub rotation: DMatrix<f64>,
    pub train: PairSplit,
    pub held_out: PairSplit,
}

impl SyntheticDataset {
    pub fn dim(&self) -> usize {
        self.config.dim
    }
}

/// Orthonormal `dim × k` basis from a seeded Gaussian matrix.
fn random_basis<R: Rng>(dim: usize, k: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

fn gap_rotation(basis: &DMatrix<f64>, angle: f64) -> DMatrix<f64> {
    let (dim, k) = basis.shape();
    let (s, c) = angle.sin_cos();
    let mut local = DMatrix::<f64>::identity(k, k);
    for p in (0..k).step_by(2) {
        local[(p, p)] = c;
        local[(p, p + 1)] = -s;
        local[(p + 1, p)] = s;
        local[(p + 1, p + 1)] = c;
    }
    let delta = local - DMatrix::<f64>::identity(k, k);
    DMatrix::<f64>::identity(dim, dim) + basis * delta * basis.transpose()
}

fn noisy_unit<R: Rng>(concept: &[f64], sigma: f64, rng: &mut R) -> Result<UnitEmbedding> {
    let v: Vec<f64> = concept
        .iter()
        .map(|c| c + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    normalize(&v)
}

/// Generates the dataset; the first 80% of pairs form the training split.
pub fn gen_synthetic(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let basis = random_basis(config.dim, config.latent_dim, &mut rng);
    let rotation = gap_rotation(&basis, config.gap_rotation_angle);

    let mut image_inputs = Vec::with_capacity(config.n_pairs);
    let mut reference_inputs = Vec::with_capacity(config.n_pairs);
    let mut text_anchors = Vec::with_capacity(config.n_pairs);
    for _ in 0..config.n_pairs {
        let z: Vec<f64> = (0..config.latent_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let z = normalize(&z)?;
        let concept = &basis * nalgebra::DVector::from_column_slice(z.as_slice());
        let concept = concept.as_slice();

        text_anchors.push(noisy_unit(concept, config.noise_sigma, &mut rng)?);
        for sink in [&mut image_inputs, &mut reference_inputs] {
            let view = noisy_unit(concept, config.noise_sigma, &mut rng)?;
            let rotated = &rotation * nalgebra::DVector::from_column_slice(view.as_slice());
            sink.push(rotated.as_slice().to_vec());
        }
    }

    let n_train = config.n_pairs - (config.n_pairs as f64 * 0.2).round() as usize;
    let split = |v: &mut Vec<Vec<f64>>| v.split_off(n_train);
    let held_out = PairSplit {
        image_inputs: split(&mut image_inputs),
        reference_inputs: split(&mut reference_inputs),
        text_anchors: text_anchors.split_off(n_train),
    };
    Ok(SyntheticDataset {
        config: config.clone(),
        rotation,
        train: PairSplit {
            image_inputs,
            reference_inputs,
            text_anchors,
        },
        held_out,
    })
}
