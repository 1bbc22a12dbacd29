//! Brute-force oracles and seeded generators shared by the integration tests.
//! Nothing here calls into the library's geometry, search, or metric code.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};

use cir_core::{BenchmarkInstance, EmbeddingBank, Modality, Protocol, UnitEmbedding};
use nalgebra::{DMatrix, DVector};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn gaussian_unit<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-3 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

pub fn unit<R: Rng>(dim: usize, rng: &mut R) -> UnitEmbedding {
    UnitEmbedding::from_unit(gaussian_unit(dim, rng)).unwrap()
}

/// Angle via `2·atan2(‖a − b‖, ‖a + b‖)`, accurate at both ends of [0, π].
pub fn oracle_angle(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let sum: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
    2.0 * norm(&diff).atan2(norm(&sum))
}

/// Great-circle point at fraction `alpha` from `v` toward `w`, built from the
/// orthonormal tangent direction instead of the two-sine weights.
pub fn oracle_slerp(v: &[f64], w: &[f64], alpha: f64) -> Vec<f64> {
    let theta = oracle_angle(v, w);
    let d: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
    let tangent: Vec<f64> = w.iter().zip(v).map(|(b, a)| b - d * a).collect();
    let tn = norm(&tangent);
    if tn == 0.0 {
        return v.to_vec();
    }
    let (s, c) = (alpha * theta).sin_cos();
    v.iter().zip(&tangent).map(|(a, t)| c * a + s * t / tn).collect()
}

pub fn row_f64(bank: &EmbeddingBank, idx: usize) -> Vec<f64> {
    bank.row(idx).iter().map(|&x| f64::from(x)).collect()
}

pub fn score(query: &[f64], row: &[f32]) -> f64 {
    let mut s = 0.0;
    for i in 0..query.len() {
        s += query[i] * f64::from(row[i]);
    }
    s
}

/// Every candidate row scored and fully sorted by (score desc, id asc).
pub fn oracle_rank(
    query: &[f64],
    gallery: &EmbeddingBank,
    candidates: impl IntoIterator<Item = usize>,
    exclude: &HashSet<String>,
) -> Vec<(String, f64)> {
    let ids = gallery.ids();
    let mut scored: Vec<(usize, f64)> = candidates
        .into_iter()
        .filter(|&i| !exclude.contains(&ids[i]))
        .map(|i| (i, score(query, gallery.row(i))))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| ids[a.0].as_bytes().cmp(ids[b.0].as_bytes()))
    });
    scored.into_iter().map(|(i, s)| (ids[i].clone(), s)).collect()
}

/// 100 if any target appears in the first `k` ids, else 0.
pub fn oracle_hit(ranked: &[String], targets: &[String], k: usize) -> f64 {
    let found = ranked.iter().take(k).any(|id| targets.contains(id));
    if found {
        100.0
    } else {
        0.0
    }
}

/// AP@K in percent, summed over each retrieved target's own precision.
pub fn oracle_ap(ranked: &[String], targets: &[String], k: usize) -> f64 {
    let ranks: Vec<usize> = targets
        .iter()
        .filter_map(|t| ranked.iter().position(|id| id == t).map(|p| p + 1))
        .filter(|&r| r <= k)
        .collect();
    let mut total = 0.0;
    for &r in &ranks {
        let above = ranks.iter().filter(|&&o| o <= r).count();
        total += above as f64 / r as f64;
    }
    100.0 * total / k.min(targets.len()) as f64
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Gallery with ids in scrambled order and a fraction of exactly duplicated
/// rows, so score ties are decided by id.
pub fn random_gallery<R: Rng>(n: usize, dim: usize, dup_fraction: f64, rng: &mut R) -> EmbeddingBank {
    let mut labels: Vec<usize> = (0..n).collect();
    labels.shuffle(rng);
    let mut rows: Vec<UnitEmbedding> = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 && rng.random::<f64>() < dup_fraction {
            let j = rng.random_range(0..i);
            rows.push(rows[j].clone());
        } else {
            rows.push(unit(dim, rng));
        }
    }
    EmbeddingBank::from_entries(
        dim,
        Modality::Image,
        labels.into_iter().zip(rows).map(|(l, v)| (format!("g{l:05}"), v)),
    )
    .unwrap()
}

pub struct Benchmark {
    pub protocol: Protocol,
    pub gallery: EmbeddingBank,
    pub texts: EmbeddingBank,
    pub instances: Vec<BenchmarkInstance>,
    pub ks: Vec<usize>,
    pub alpha: f64,
}

/// Seeded random benchmark; the gallery doubles as the reference image bank.
pub fn random_benchmark<R: Rng>(protocol: Protocol, max_queries: usize, max_gallery: usize, rng: &mut R) -> Benchmark {
    let dim = [8, 16, 32][rng.random_range(0..3)];
    let n_gallery = rng.random_range(12..=max_gallery);
    let n_queries = rng.random_range(1..=max_queries);
    let gallery = random_gallery(n_gallery, dim, 0.05, rng);
    let texts = EmbeddingBank::from_entries(
        dim,
        Modality::Text,
        (0..n_queries).map(|q| (format!("c{q:04}"), unit(dim, rng))),
    )
    .unwrap();
    let ids = gallery.ids().to_vec();
    let categories = ["dress", "shirt", "toptee"];
    let instances = (0..n_queries)
        .map(|q| {
            let mut picks: Vec<&String> = ids.choose_multiple(rng, 6).collect();
            picks.shuffle(rng);
            let reference = picks[0].clone();
            let n_targets = rng.random_range(1..=4);
            let targets: Vec<String> = picks[1..=n_targets].iter().map(|s| (*s).clone()).collect();
            let mut inst = BenchmarkInstance::new(format!("q{q:04}"), reference, format!("c{q:04}"), targets).unwrap();
            inst.exclude_reference = rng.random();
            if protocol == Protocol::Cirr {
                let subset: Vec<String> = picks.iter().map(|s| (*s).clone()).collect();
                inst = inst.with_subset(subset).unwrap();
            }
            if protocol == Protocol::FashionIq {
                inst = inst.with_category(categories[rng.random_range(0..3)]);
            }
            inst
        })
        .collect();
    let mut ks: Vec<usize> = (0..3).map(|_| rng.random_range(1..=60)).collect();
    ks.sort_unstable();
    ks.dedup();
    let alpha = rng.random_range(1..=10) as f64 / 10.0;
    Benchmark {
        protocol,
        gallery,
        texts,
        instances,
        ks,
        alpha,
    }
}

pub struct OracleReport {
    pub per_k: BTreeMap<usize, f64>,
    pub subset: Option<BTreeMap<usize, f64>>,
    pub per_category: Option<BTreeMap<String, BTreeMap<usize, f64>>>,
}

/// Brute-force evaluation: compose with [`oracle_slerp`], sort every
/// candidate, and apply the metric definitions directly.
pub fn oracle_evaluate(b: &Benchmark, subset_ks: &[usize]) -> OracleReport {
    let gallery = &b.gallery;
    let n = gallery.len();
    let mut lists = Vec::new();
    let mut subset_lists = Vec::new();
    for inst in &b.instances {
        let v = row_f64(gallery, gallery.position(&inst.reference_id).unwrap());
        let w = row_f64(&b.texts, b.texts.position(inst.caption_id.as_deref().unwrap()).unwrap());
        let q = oracle_slerp(&v, &w, b.alpha);
        let mut exclude = HashSet::new();
        if inst.exclude_reference {
            exclude.insert(inst.reference_id.clone());
        }
        let ranked: Vec<String> = oracle_rank(&q, gallery, 0..n, &exclude)
            .into_iter()
            .map(|(id, _)| id)
            .collect();
        lists.push(ranked);
        if let Some(subset) = &inst.subset_ids {
            let mut idx: Vec<usize> = subset.iter().map(|id| gallery.position(id).unwrap()).collect();
            idx.sort_unstable();
            idx.dedup();
            let ex = HashSet::from([inst.reference_id.clone()]);
            subset_lists.push(
                oracle_rank(&q, gallery, idx, &ex)
                    .into_iter()
                    .map(|(id, _)| id)
                    .collect::<Vec<_>>(),
            );
        }
    }
    let recall = |sel: &[usize], lists: &[Vec<String>], k: usize| -> f64 {
        let v: Vec<f64> = sel
            .iter()
            .map(|&i| oracle_hit(&lists[i], &b.instances[i].target_ids, k))
            .collect();
        mean(&v)
    };
    let all: Vec<usize> = (0..b.instances.len()).collect();
    let mut out = OracleReport {
        per_k: BTreeMap::new(),
        subset: None,
        per_category: None,
    };
    match b.protocol {
        Protocol::GenericRecall | Protocol::Cirr => {
            for &k in &b.ks {
                out.per_k.insert(k, recall(&all, &lists, k));
            }
            if b.protocol == Protocol::Cirr {
                out.subset = Some(subset_ks.iter().map(|&k| (k, recall(&all, &subset_lists, k))).collect());
            }
        }
        Protocol::Circo => {
            for &k in &b.ks {
                let aps: Vec<f64> = all
                    .iter()
                    .map(|&i| oracle_ap(&lists[i], &b.instances[i].target_ids, k))
                    .collect();
                out.per_k.insert(k, mean(&aps));
            }
        }
        Protocol::FashionIq => {
            let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for (i, inst) in b.instances.iter().enumerate() {
                groups.entry(inst.category.clone().unwrap()).or_default().push(i);
            }
            let mut per_cat = BTreeMap::new();
            for (cat, sel) in &groups {
                let scores: BTreeMap<usize, f64> = b.ks.iter().map(|&k| (k, recall(sel, &lists, k))).collect();
                per_cat.insert(cat.clone(), scores);
            }
            for &k in &b.ks {
                let v: Vec<f64> = per_cat.values().map(|s| s[&k]).collect();
                out.per_k.insert(k, mean(&v));
            }
            out.per_category = Some(per_cat);
        }
    }
    out
}

/// Loss of an explicit tower with per-row adapter gains, computed from
/// scratch with plain loops.
pub fn oracle_tower_loss(
    base: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    gains: &[DVector<f64>],
    xs: &[Vec<f64>],
    ws: &[Vec<f64>],
    scale: f64,
) -> f64 {
    let (d_out, d_in) = base.shape();
    let r = a.nrows();
    let ys: Vec<Vec<f64>> = xs
        .iter()
        .zip(gains)
        .map(|(x, g)| {
            let mut u = vec![0.0; r];
            for (p, up) in u.iter_mut().enumerate() {
                for j in 0..d_in {
                    *up += a[(p, j)] * x[j];
                }
            }
            let mut h = vec![0.0; d_out];
            for i in 0..d_out {
                let mut base_part = 0.0;
                for j in 0..d_in {
                    base_part += base[(i, j)] * x[j];
                }
                let mut lora_part = 0.0;
                for p in 0..r {
                    lora_part += b[(i, p)] * u[p];
                }
                h[i] = base_part + g[i] * lora_part;
            }
            let n = norm(&h);
            h.iter().map(|v| v / n).collect()
        })
        .collect();
    oracle_loss(&ys, ws, scale)
}

/// `L_I2T + L_T2I` by direct log-sum-exp over each row and column.
pub fn oracle_loss(v: &[Vec<f64>], w: &[Vec<f64>], scale: f64) -> f64 {
    let n = v.len();
    let s: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| scale * v[i].iter().zip(&w[j]).map(|(p, q)| p * q).sum::<f64>())
                .collect()
        })
        .collect();
    let lse = |xs: &[f64]| {
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
    };
    let mut total = 0.0;
    for (i, row) in s.iter().enumerate() {
        let col: Vec<f64> = s.iter().map(|r| r[i]).collect();
        total += lse(row) - row[i] + lse(&col) - row[i];
    }
    total / n as f64
}
