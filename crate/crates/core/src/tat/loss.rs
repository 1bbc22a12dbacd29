//! Symmetric in-batch contrastive loss (image→text plus text→image) and its
//! exact gradient.

use nalgebra::{DMatrix, DVector};

use crate::error::{CirError, Result};
use crate::geometry::UnitEmbedding;
use crate::tat::tower::{LoraGrads, TowerParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub image_to_text: f64,
    pub text_to_image: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.image_to_text + self.text_to_image
    }
}

/// Paired raw image inputs and frozen text anchors, aligned by index.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub image_inputs: Vec<Vec<f64>>,
    pub text_anchors: Vec<UnitEmbedding>,
}

impl TrainBatch {
    pub fn new(image_inputs: Vec<Vec<f64>>, text_anchors: Vec<UnitEmbedding>) -> Result<Self> {
        if image_inputs.len() != text_anchors.len() {
            return Err(CirError::CountMismatch {
                ranked: image_inputs.len(),
                instances: text_anchors.len(),
            });
        }
        if image_inputs.is_empty() {
            return Err(CirError::EmptyPairs);
        }
        Ok(Self {
            image_inputs,
            text_anchors,
        })
    }

    pub fn len(&self) -> usize {
        self.image_inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_inputs.is_empty()
    }
}

fn similarity_logits<V: AsRef<[f64]>>(v: &[V], w: &[V], logit_scale: f64) -> Result<DMatrix<f64>> {
    if v.len() != w.len() {
        return Err(CirError::CountMismatch {
            ranked: v.len(),
            instances: w.len(),
        });
    }
    if v.is_empty() {
        return Err(CirError::EmptyPairs);
    }
    let dim = v[0].as_ref().len();
    for x in v.iter().chain(w) {
        if x.as_ref().len() != dim {
            return Err(CirError::DimMismatch {
                expected: dim,
                found: x.as_ref().len(),
            });
        }
    }
    let n = v.len();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let s: f64 = v[i].as_ref().iter().zip(w[j].as_ref()).map(|(a, b)| a * b).sum();
        s * logit_scale
    }))
}

/// Row-wise log-sum-exp with max subtraction, and the row softmax.
fn row_log_softmax(logits: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (n, m) = logits.shape();
    let mut lse = DVector::zeros(n);
    let mut probs = DMatrix::zeros(n, m);
    for i in 0..n {
        let row = logits.row(i);
        let max = row.max();
        let sum: f64 = row.iter().map(|s| (s - max).exp()).sum();
        lse[i] = max + sum.ln();
        for j in 0..m {
            probs[(i, j)] = (logits[(i, j)] - lse[i]).exp();
        }
    }
    (lse, probs)
}

/// Loss from a precomputed square logit matrix whose diagonal holds the
/// positive pairs.
pub fn loss_from_logits(logits: &DMatrix<f64>) -> LossParts {
    let n = logits.nrows();
    let (row_lse, _) = row_log_softmax(logits);
    let (col_lse, _) = row_log_softmax(&logits.transpose());
    let diag: f64 = (0..n).map(|i| logits[(i, i)]).sum();
    let nf = n as f64;
    LossParts {
        image_to_text: (row_lse.sum() - diag) / nf,
        text_to_image: (col_lse.sum() - diag) / nf,
    }
}

/// `L_I2T + L_T2I` with similarities divided by the temperature `tau`.
pub fn contrastive_loss<V: AsRef<[f64]>>(v: &[V], w: &[V], tau: f64) -> Result<f64> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(CirError::BadConfig("temperature must be positive".into()));
    }
    Ok(contrastive_loss_scaled(v, w, 1.0 / tau)?.total())
}

/// Loss with similarities multiplied by `logit_scale`.
pub fn contrastive_loss_scaled<V: AsRef<[f64]>>(v: &[V], w: &[V], logit_scale: f64) -> Result<LossParts> {
    Ok(loss_from_logits(&similarity_logits(v, w, logit_scale)?))
}

/// Loss with per-row gradients for the image side and the text side.
pub type LossAndGrads = (LossParts, Vec<DVector<f64>>, Vec<DVector<f64>>);

/// Loss plus `∂L/∂v_i` and `∂L/∂w_j`.
pub fn contrastive_grads<V: AsRef<[f64]>>(v: &[V], w: &[V], logit_scale: f64) -> Result<LossAndGrads> {
    let logits = similarity_logits(v, w, logit_scale)?;
    let n = logits.nrows();
    let nf = n as f64;
    let (row_lse, row_p) = row_log_softmax(&logits);
    let (col_lse, col_p_t) = row_log_softmax(&logits.transpose());
    let diag: f64 = (0..n).map(|i| logits[(i, i)]).sum();
    let parts = LossParts {
        image_to_text: (row_lse.sum() - diag) / nf,
        text_to_image: (col_lse.sum() - diag) / nf,
    };

    // ∂L/∂S = (P - I)/N + (Q - I)/N with Q the column softmax of S.
    let mut g = (row_p + col_p_t.transpose()) / nf;
    for i in 0..n {
        g[(i, i)] -= 2.0 / nf;
    }
    let dim = v[0].as_ref().len();
    let vm = DMatrix::from_fn(n, dim, |i, k| v[i].as_ref()[k]);
    let wm = DMatrix::from_fn(n, dim, |i, k| w[i].as_ref()[k]);
    let grad_v = (&g * &wm) * logit_scale;
    let grad_w = (g.transpose() * &vm) * logit_scale;
    let rows = |m: DMatrix<f64>| -> Vec<DVector<f64>> { (0..n).map(|i| m.row(i).transpose()).collect() };
    Ok((parts, rows(grad_v), rows(grad_w)))
}

/// Exact eval-mode gradient of the loss with respect to the image tower's
/// adapter factors, with the text anchors held fixed.
pub fn grad_contrastive(batch: &TrainBatch, params: &TowerParams, logit_scale: f64) -> Result<(LossParts, LoraGrads)> {
    let gains = vec![params.eval_branch_gain(); batch.len()];
    grad_contrastive_with_gains(batch, params, logit_scale, &gains)
}

/// As [`grad_contrastive`], with one adapter-branch gain vector per row
/// (dropout masks).
pub fn grad_contrastive_with_gains(
    batch: &TrainBatch,
    params: &TowerParams,
    logit_scale: f64,
    gains: &[DVector<f64>],
) -> Result<(LossParts, LoraGrads)> {
    let caches = batch
        .image_inputs
        .iter()
        .zip(gains)
        .map(|(x, g)| params.forward_with_gain(x, g.clone()))
        .collect::<Result<Vec<_>>>()?;
    let v: Vec<&[f64]> = caches.iter().map(|c| c.y.as_slice()).collect();
    let w: Vec<&[f64]> = batch.text_anchors.iter().map(|t| t.as_slice()).collect();
    let (parts, grad_v, _) = contrastive_grads(&v, &w, logit_scale)?;
    let mut grads = LoraGrads::zeros_like(params);
    for (cache, gv) in caches.iter().zip(&grad_v) {
        params.backward(cache, gv, &mut grads);
    }
    Ok((parts, grads))
}
