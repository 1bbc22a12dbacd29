//! Modality-gap statistics between paired image and text embeddings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bank::EmbeddingBank;
use crate::error::{CirError, Result};
use crate::geometry::{cosine, UnitEmbedding};

/// Upper bound on the number of unpaired `(i, j)` samples.
pub const MAX_UNPAIRED_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub mean_paired_cosine: f64,
    /// `None` when there is only one pair.
    pub mean_unpaired_cosine: Option<f64>,
    pub mean_paired_angle: f64,
    pub n_pairs: usize,
}

/// Gap statistics for `images[i]` paired with `texts[i]`.
///
/// Unpaired cosines use every `(i, j)`, `i ≠ j`, when there are at most
/// [`MAX_UNPAIRED_SAMPLES`] of them, otherwise a sample of that size drawn
/// with `seed`.
pub fn modality_gap(images: &[UnitEmbedding], texts: &[UnitEmbedding], seed: u64) -> Result<GapStats> {
    if images.len() != texts.len() {
        return Err(CirError::CountMismatch {
            ranked: images.len(),
            instances: texts.len(),
        });
    }
    let n = images.len();
    if n == 0 {
        return Err(CirError::EmptyPairs);
    }
    let mut cos_sum = 0.0;
    let mut angle_sum = 0.0;
    for (v, w) in images.iter().zip(texts) {
        let c = cosine(v, w)?;
        cos_sum += c;
        angle_sum += c.acos();
    }

    let mean_unpaired_cosine = if n < 2 {
        None
    } else if n * (n - 1) <= MAX_UNPAIRED_SAMPLES {
        let mut sum = 0.0;
        for (i, v) in images.iter().enumerate() {
            for (j, w) in texts.iter().enumerate() {
                if i != j {
                    sum += cosine(v, w)?;
                }
            }
        }
        Some(sum / (n * (n - 1)) as f64)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sum = 0.0;
        for _ in 0..MAX_UNPAIRED_SAMPLES {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            sum += cosine(&images[i], &texts[j])?;
        }
        Some(sum / MAX_UNPAIRED_SAMPLES as f64)
    };

    Ok(GapStats {
        mean_paired_cosine: cos_sum / n as f64,
        mean_unpaired_cosine,
        mean_paired_angle: angle_sum / n as f64,
        n_pairs: n,
    })
}

/// [`modality_gap`] over `(image_id, text_id)` pairs looked up in two banks.
pub fn modality_gap_banks(
    image_bank: &EmbeddingBank,
    text_bank: &EmbeddingBank,
    pairs: &[(String, String)],
    seed: u64,
) -> Result<GapStats> {
    let mut images = Vec::with_capacity(pairs.len());
    let mut texts = Vec::with_capacity(pairs.len());
    for (img, txt) in pairs {
        images.push(image_bank.get(img)?);
        texts.push(text_bank.get(txt)?);
    }
    modality_gap(&images, &texts, seed)
}
