//! Hypersphere math: normalization, cosine, angle and Slerp composition.
//!
//! All arithmetic is done in `f64`, regardless of how embeddings are stored.

use serde::{Deserialize, Serialize};

use crate::error::{CirError, Result};

/// Norms at or below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

/// Below this angle (radians) Slerp falls back to normalized linear interpolation.
pub const THETA_MIN: f64 = 1e-4;

/// Maximum allowed deviation of `‖v‖₂` from 1 for a [`UnitEmbedding`].
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// An L2-normalized embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitEmbedding {
    values: Vec<f64>,
}

impl UnitEmbedding {
    /// Normalizes `raw` onto the unit sphere.
    pub fn normalize(raw: &[f64]) -> Result<Self> {
        normalize(raw)
    }

    /// Wraps `values`, re-normalizing only when the norm is off by more than
    /// [`UNIT_TOLERANCE`].
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(CirError::EmptyVector);
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(CirError::NonFinite);
        }
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Self::normalize(&values);
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn dot(&self, other: &UnitEmbedding) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok(dot(&self.values, &other.values))
    }
}

impl AsRef<[f64]> for UnitEmbedding {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Slerp weight in `[0, 1]`: 0 selects the image side, 1 the text side.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct BalancingScalar(f64);

impl BalancingScalar {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(CirError::InvalidAlpha(alpha));
        }
        Ok(Self(alpha))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for BalancingScalar {
    type Error = CirError;

    fn try_from(alpha: f64) -> Result<Self> {
        Self::new(alpha)
    }
}

impl From<BalancingScalar> for f64 {
    fn from(alpha: BalancingScalar) -> f64 {
        alpha.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(CirError::DimMismatch { expected, found });
    }
    Ok(())
}

pub fn normalize(raw: &[f64]) -> Result<UnitEmbedding> {
    if raw.is_empty() {
        return Err(CirError::EmptyVector);
    }
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(CirError::NonFinite);
    }
    let norm = l2_norm(raw);
    if norm <= ZERO_NORM {
        return Err(CirError::ZeroVector);
    }
    Ok(UnitEmbedding {
        values: raw.iter().map(|x| x / norm).collect(),
    })
}

/// Cosine similarity of two unit embeddings, clamped to `[-1, 1]`.
pub fn cosine(u: &UnitEmbedding, v: &UnitEmbedding) -> Result<f64> {
    Ok(u.dot(v)?.clamp(-1.0, 1.0))
}

/// Angle between two unit embeddings in radians, in `[0, π]`.
pub fn angle(v: &UnitEmbedding, w: &UnitEmbedding) -> Result<f64> {
    Ok(cosine(v, w)?.acos())
}

/// Spherical linear interpolation from `v` (alpha = 0) to `w` (alpha = 1).
///
/// The endpoints are returned verbatim. For angles below [`THETA_MIN`] the
/// normalized linear interpolation is used instead; the two agree to O(θ²)
/// there. Near-antipodal inputs are rejected for interior alphas because the
/// great circle through them is not unique.
pub fn slerp(v: &UnitEmbedding, w: &UnitEmbedding, alpha: BalancingScalar) -> Result<UnitEmbedding> {
    check_dims(v.dim(), w.dim())?;
    let alpha = alpha.get();
    if alpha == 0.0 {
        return Ok(v.clone());
    }
    if alpha == 1.0 {
        return Ok(w.clone());
    }
    let theta = angle(v, w)?;
    if theta > std::f64::consts::PI - THETA_MIN {
        return Err(CirError::Antipodal { angle: theta });
    }
    let (cv, cw) = if theta < THETA_MIN {
        (1.0 - alpha, alpha)
    } else {
        let s = theta.sin();
        (((1.0 - alpha) * theta).sin() / s, (alpha * theta).sin() / s)
    };
    let mixed: Vec<f64> = v
        .as_slice()
        .iter()
        .zip(w.as_slice())
        .map(|(a, b)| cv * a + cw * b)
        .collect();
    normalize(&mixed)
}

/// Normalized linear interpolation; the small-angle branch of [`slerp`].
pub fn nlerp(v: &UnitEmbedding, w: &UnitEmbedding, alpha: BalancingScalar) -> Result<UnitEmbedding> {
    check_dims(v.dim(), w.dim())?;
    let alpha = alpha.get();
    let mixed: Vec<f64> = v
        .as_slice()
        .iter()
        .zip(w.as_slice())
        .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
        .collect();
    normalize(&mixed)
}
