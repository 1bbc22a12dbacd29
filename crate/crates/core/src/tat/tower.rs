//! A frozen linear tower with a low-rank adapter:
//! `y = normalize((base + (lora_alpha / r) · B · A) · x)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{CirError, Result};
use crate::geometry::{UnitEmbedding, ZERO_NORM};

#[derive(Debug, Clone, PartialEq)]
pub struct TowerParams {
    /// Frozen `d_out × d_in` map.
    pub base: DMatrix<f64>,
    /// `r × d_in`.
    pub lora_a: DMatrix<f64>,
    /// `d_out × r`, zero at initialization.
    pub lora_b: DMatrix<f64>,
    pub lora_alpha: f64,
    pub dropout_p: f64,
}

/// Gradients with respect to the adapter factors.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraGrads {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LoraGrads {
    pub fn zeros_like(params: &TowerParams) -> Self {
        Self {
            a: DMatrix::zeros(params.lora_a.nrows(), params.lora_a.ncols()),
            b: DMatrix::zeros(params.lora_b.nrows(), params.lora_b.ncols()),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.a.norm_squared() + self.b.norm_squared()).sqrt()
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub x: DVector<f64>,
    /// `A · x`
    pub u: DVector<f64>,
    /// Per-output multiplier on the adapter branch: `scale` (eval) or
    /// `scale · mask / (1 - p)` (train).
    pub branch_gain: DVector<f64>,
    pub h_norm: f64,
    pub y: DVector<f64>,
}

impl TowerParams {
    /// Adapter with `lora_b = 0` and `lora_a ~ U(-1/√d_in, 1/√d_in)`.
    pub fn init<R: Rng + ?Sized>(
        base: DMatrix<f64>,
        rank: usize,
        lora_alpha: f64,
        dropout_p: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if rank == 0 {
            return Err(CirError::BadConfig("adapter rank must be positive".into()));
        }
        if !(lora_alpha > 0.0 && lora_alpha.is_finite()) {
            return Err(CirError::BadConfig("lora_alpha must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(CirError::BadConfig("dropout must be in [0, 1)".into()));
        }
        let (d_out, d_in) = base.shape();
        if d_in == 0 || d_out == 0 {
            return Err(CirError::BadConfig("tower dimensions must be positive".into()));
        }
        let bound = 1.0 / (d_in as f64).sqrt();
        let lora_a = DMatrix::from_fn(rank, d_in, |_, _| rng.random_range(-bound..bound));
        Ok(Self {
            base,
            lora_a,
            lora_b: DMatrix::zeros(d_out, rank),
            lora_alpha,
            dropout_p,
        })
    }

    pub fn identity<R: Rng + ?Sized>(
        dim: usize,
        rank: usize,
        lora_alpha: f64,
        dropout_p: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Self::init(DMatrix::identity(dim, dim), rank, lora_alpha, dropout_p, rng)
    }

    pub fn d_in(&self) -> usize {
        self.base.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.base.nrows()
    }

    pub fn rank(&self) -> usize {
        self.lora_a.nrows()
    }

    pub fn scale(&self) -> f64 {
        self.lora_alpha / self.rank() as f64
    }

    /// Effective weight `base + scale · B · A`.
    pub fn merged(&self) -> DMatrix<f64> {
        &self.base + (&self.lora_b * &self.lora_a) * self.scale()
    }

    pub fn trainable_parameters(&self) -> usize {
        self.lora_a.len() + self.lora_b.len()
    }

    /// Samples a dropout gain vector for the adapter branch.
    pub fn sample_branch_gain<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let keep = 1.0 - self.dropout_p;
        let kept = self.scale() / keep;
        DVector::from_fn(self.d_out(), |_, _| {
            if self.dropout_p > 0.0 && rng.random::<f64>() < self.dropout_p {
                0.0
            } else {
                kept
            }
        })
    }

    pub fn eval_branch_gain(&self) -> DVector<f64> {
        DVector::from_element(self.d_out(), self.scale())
    }

    /// Forward pass with an explicit adapter-branch gain.
    pub fn forward_with_gain(&self, x: &[f64], branch_gain: DVector<f64>) -> Result<ForwardCache> {
        if x.len() != self.d_in() {
            return Err(CirError::DimMismatch {
                expected: self.d_in(),
                found: x.len(),
            });
        }
        let x = DVector::from_column_slice(x);
        let u = &self.lora_a * &x;
        let z = &self.lora_b * &u;
        let h = &self.base * &x + z.component_mul(&branch_gain);
        let h_norm = h.norm();
        if !h_norm.is_finite() {
            return Err(CirError::NonFinite);
        }
        if h_norm <= ZERO_NORM {
            return Err(CirError::ZeroVector);
        }
        let y = h / h_norm;
        Ok(ForwardCache {
            x,
            u,
            branch_gain,
            h_norm,
            y,
        })
    }

    /// Backpropagates `grad_y = ∂L/∂y` to the adapter factors.
    pub fn backward(&self, cache: &ForwardCache, grad_y: &DVector<f64>, into: &mut LoraGrads) {
        // Jacobian of y = h / ‖h‖.
        let radial = cache.y.dot(grad_y);
        let grad_h = (grad_y - &cache.y * radial) / cache.h_norm;
        let grad_z = grad_h.component_mul(&cache.branch_gain);
        into.b += &grad_z * cache.u.transpose();
        let grad_u = self.lora_b.transpose() * grad_z;
        into.a += grad_u * cache.x.transpose();
    }
}

/// Runs the tower on `x`. In train mode the adapter branch output is dropped
/// with probability `dropout_p` and rescaled by `1 / (1 - p)`; the base branch
/// is never dropped.
pub fn forward_tower<R: Rng + ?Sized>(
    params: &TowerParams,
    x: &[f64],
    train_mode: bool,
    rng: &mut R,
) -> Result<UnitEmbedding> {
    let gain = if train_mode {
        params.sample_branch_gain(rng)
    } else {
        params.eval_branch_gain()
    };
    let cache = params.forward_with_gain(x, gain)?;
    UnitEmbedding::from_unit(cache.y.as_slice().to_vec())
}

/// Eval-mode forward for a batch of raw inputs.
pub fn embed_all(params: &TowerParams, inputs: &[Vec<f64>]) -> Result<Vec<UnitEmbedding>> {
    let gain = params.eval_branch_gain();
    inputs
        .iter()
        .map(|x| {
            let cache = params.forward_with_gain(x, gain.clone())?;
            UnitEmbedding::from_unit(cache.y.as_slice().to_vec())
        })
        .collect()
}
