//! Exact top-k cosine search over an [`EmbeddingBank`].

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::bank::EmbeddingBank;
use crate::error::{CirError, Result};
use crate::geometry::UnitEmbedding;

/// Galleries are split into roughly this many rows per shard when the shard
/// count is chosen automatically.
const AUTO_SHARD_ROWS: usize = 8192;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hit {
    pub gallery_id: String,
    pub score: f64,
}

/// Hits for one query, best first. Ties are broken by ascending gallery id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedList {
    pub query_id: String,
    pub hits: Vec<Hit>,
}

impl RankedList {
    pub fn new(query_id: impl Into<String>, hits: Vec<Hit>) -> Self {
        Self {
            query_id: query_id.into(),
            hits,
        }
    }

    /// 1-based rank of `gallery_id`, if present.
    pub fn rank_of(&self, gallery_id: &str) -> Option<usize> {
        rank_of(gallery_id, self)
    }
}

pub fn rank_of(target_id: &str, ranked: &RankedList) -> Option<usize> {
    ranked
        .hits
        .iter()
        .position(|h| h.gallery_id == target_id)
        .map(|p| p + 1)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SearchOptions {
    /// Number of gallery partitions scored independently. `None` picks one
    /// from the gallery size and thread count. Results do not depend on it.
    pub shards: Option<usize>,
}

impl SearchOptions {
    pub fn with_shards(shards: usize) -> Self {
        Self {
            shards: Some(shards.max(1)),
        }
    }

    fn shard_count(&self, rows: usize) -> usize {
        match self.shards {
            Some(s) => s.max(1),
            None => rows
                .div_ceil(AUTO_SHARD_ROWS)
                .clamp(1, rayon::current_num_threads().max(1)),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate<'a> {
    score: f64,
    id: &'a str,
}

impl Candidate<'_> {
    /// `Less` means `self` ranks ahead of `other`.
    fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.id.as_bytes().cmp(other.id.as_bytes()))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.rank_cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Max-heap order puts the worst-ranked candidate on top.
impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank_cmp(other)
    }
}

fn score_row(query: &[f64], row: &[f32]) -> f64 {
    query.iter().zip(row).map(|(q, &g)| q * g as f64).sum()
}

fn shard_top_k<'a>(
    query: &[f64],
    gallery: &'a EmbeddingBank,
    rows: std::ops::Range<usize>,
    k: usize,
    exclude: &HashSet<String>,
) -> Vec<Candidate<'a>> {
    let mut heap = BinaryHeap::with_capacity(k + 1);
    for idx in rows {
        let id = gallery.ids()[idx].as_str();
        if exclude.contains(id) {
            continue;
        }
        let cand = Candidate {
            score: score_row(query, gallery.row(idx)),
            id,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(worst) = heap.peek() {
            if cand.rank_cmp(worst) == Ordering::Less {
                heap.pop();
                heap.push(cand);
            }
        }
    }
    heap.into_vec()
}

/// Exact top-`k` search with default options.
pub fn top_k(query: &UnitEmbedding, gallery: &EmbeddingBank, k: usize, exclude: &HashSet<String>) -> Result<Vec<Hit>> {
    top_k_with(query, gallery, k, exclude, SearchOptions::default())
}

pub fn top_k_with(
    query: &UnitEmbedding,
    gallery: &EmbeddingBank,
    k: usize,
    exclude: &HashSet<String>,
    options: SearchOptions,
) -> Result<Vec<Hit>> {
    if k == 0 {
        return Err(CirError::ZeroK);
    }
    if query.dim() != gallery.dim() {
        return Err(CirError::DimMismatch {
            expected: gallery.dim(),
            found: query.dim(),
        });
    }
    let n = gallery.len();
    let shards = options.shard_count(n).min(n.max(1));
    let q = query.as_slice();
    let mut merged: Vec<Candidate<'_>> = if shards <= 1 {
        shard_top_k(q, gallery, 0..n, k, exclude)
    } else {
        let per = n.div_ceil(shards);
        (0..shards)
            .into_par_iter()
            .map(|s| {
                let lo = (s * per).min(n);
                let hi = ((s + 1) * per).min(n);
                shard_top_k(q, gallery, lo..hi, k, exclude)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    };
    merged.sort_unstable_by(Candidate::rank_cmp);
    merged.truncate(k);
    Ok(merged
        .into_iter()
        .map(|c| Hit {
            gallery_id: c.id.to_string(),
            score: c.score,
        })
        .collect())
}

/// Runs [`top_k_with`] for every query. Output order follows input order.
pub fn batch_top_k(
    queries: &[(String, UnitEmbedding)],
    gallery: &EmbeddingBank,
    k: usize,
    per_query_exclude: &HashMap<String, HashSet<String>>,
    options: SearchOptions,
) -> Result<Vec<RankedList>> {
    if k == 0 {
        return Err(CirError::ZeroK);
    }
    if let Some((id, q)) = queries.iter().find(|(_, q)| q.dim() != gallery.dim()) {
        return Err(CirError::QueryDimMismatch {
            query_id: id.clone(),
            expected: gallery.dim(),
            found: q.dim(),
        });
    }
    let empty = HashSet::new();
    queries
        .par_iter()
        .map(|(id, q)| {
            let exclude = per_query_exclude.get(id).unwrap_or(&empty);
            let hits = top_k_with(q, gallery, k, exclude, options)?;
            Ok(RankedList::new(id.clone(), hits))
        })
        .collect()
}

/// Scores `query` against the listed gallery ids only (minus `exclude`) and
/// returns every candidate in rank order. Repeated ids are scored once.
pub fn rank_candidates(
    query: &UnitEmbedding,
    gallery: &EmbeddingBank,
    candidate_ids: &[String],
    exclude: &HashSet<String>,
) -> Result<Vec<Hit>> {
    if query.dim() != gallery.dim() {
        return Err(CirError::DimMismatch {
            expected: gallery.dim(),
            found: query.dim(),
        });
    }
    let mut seen = HashSet::new();
    let mut cands = Vec::with_capacity(candidate_ids.len());
    for id in candidate_ids {
        if exclude.contains(id) || !seen.insert(id.as_str()) {
            continue;
        }
        let idx = gallery.position(id).ok_or_else(|| CirError::UnknownId(id.clone()))?;
        cands.push(Candidate {
            score: score_row(query.as_slice(), gallery.row(idx)),
            id: id.as_str(),
        });
    }
    cands.sort_unstable_by(Candidate::rank_cmp);
    Ok(cands
        .into_iter()
        .map(|c| Hit {
            gallery_id: c.id.to_string(),
            score: c.score,
        })
        .collect())
}

/// Formats `x` with 9 significant digits, `%.9g` style.
pub fn format_score(x: f64) -> String {
    const SIG: i32 = 9;
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", (SIG - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..SIG).contains(&exp) {
        let decimals = (SIG - 1 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let mantissa = trim_zeros(mantissa.to_string());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Writes ranked lists as `query_id \t rank \t gallery_id \t score` rows.
pub fn write_tsv<W: Write>(lists: &[RankedList], mut out: W) -> std::io::Result<()> {
    for list in lists {
        for (i, hit) in list.hits.iter().enumerate() {
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                list.query_id,
                i + 1,
                hit.gallery_id,
                format_score(hit.score)
            )?;
        }
    }
    Ok(())
}
