//! Composed-retrieval evaluation protocols: Recall@K, subset Recall@K, mAP@K,
//! and the balancing-scalar sweep.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bank::EmbeddingBank;
use crate::error::{CirError, Result};
use crate::geometry::{normalize, slerp, BalancingScalar, UnitEmbedding};
use crate::search::{batch_top_k, rank_candidates, RankedList, SearchOptions};

pub type KScores = BTreeMap<usize, f64>;

/// One composed-retrieval query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkInstance {
    pub query_id: String,
    pub reference_id: String,
    /// Key into the text bank.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_id: Option<String>,
    /// Raw caption; used as the text-bank key when `caption_id` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    /// Keys of individual captions when a query has several (FashionIQ pairs
    /// two); selected by [`CaptionMode`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_ids: Option<Vec<String>>,
    pub target_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_ids: Option<Vec<String>>,
    /// FashionIQ-style category used for macro averaging.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    /// Drop the reference image from open-gallery candidates.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub exclude_reference: bool,
}

impl BenchmarkInstance {
    pub fn new(
        query_id: impl Into<String>,
        reference_id: impl Into<String>,
        caption_id: impl Into<String>,
        target_ids: Vec<String>,
    ) -> Result<Self> {
        let inst = Self {
            query_id: query_id.into(),
            reference_id: reference_id.into(),
            caption_id: Some(caption_id.into()),
            caption: None,
            caption_ids: None,
            target_ids,
            subset_ids: None,
            category: None,
            exclude_reference: false,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn with_subset(mut self, subset_ids: Vec<String>) -> Result<Self> {
        self.subset_ids = Some(subset_ids);
        self.validate()?;
        Ok(self)
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.category = Some(category.into());
        self
    }

    pub fn caption_key(&self) -> Option<&str> {
        self.caption_id.as_deref().or(self.caption.as_deref())
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| CirError::InvalidInstance {
            query_id: self.query_id.clone(),
            reason: reason.to_string(),
        };
        match &self.caption_ids {
            Some(ids) if ids.is_empty() => return Err(invalid("caption_ids is empty")),
            None if self.caption_key().is_none() => {
                return Err(invalid("none of caption_id, caption or caption_ids is set"))
            }
            _ => {}
        }
        if self.target_ids.is_empty() {
            return Err(invalid("target_ids is empty"));
        }
        let targets: HashSet<&str> = self.target_ids.iter().map(String::as_str).collect();
        if targets.len() != self.target_ids.len() {
            return Err(invalid("target_ids contains duplicates"));
        }
        if let Some(subset) = &self.subset_ids {
            let subset: HashSet<&str> = subset.iter().map(String::as_str).collect();
            if !targets.is_subset(&subset) {
                return Err(invalid("target_ids is not contained in subset_ids"));
            }
            if targets.contains(self.reference_id.as_str()) {
                return Err(invalid("reference_id is one of the targets"));
            }
        }
        Ok(())
    }
}

/// Parses a JSON-lines instance file. Blank lines are skipped; errors carry
/// the 1-based line number.
pub fn read_instances<R: BufRead>(reader: R) -> Result<Vec<(usize, BenchmarkInstance)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: BenchmarkInstance = serde_json::from_str(&line).map_err(|e| CirError::MalformedLine {
            line: line_no,
            message: e.to_string(),
        })?;
        inst.validate().map_err(|e| CirError::AtLine {
            line: line_no,
            source: Box::new(e),
        })?;
        if !seen.insert(inst.query_id.clone()) {
            return Err(CirError::AtLine {
                line: line_no,
                source: Box::new(CirError::DuplicateId(inst.query_id)),
            });
        }
        out.push((line_no, inst));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    GenericRecall,
    Cirr,
    Circo,
    #[serde(rename = "fashioniq")]
    FashionIq,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::GenericRecall => "generic_recall",
            Protocol::Cirr => "cirr",
            Protocol::Circo => "circo",
            Protocol::FashionIq => "fashioniq",
        }
    }

    /// Text-weighted defaults: 0.9 for CIRR, 0.8 for CIRCO and FashionIQ.
    pub fn default_alpha(self) -> f64 {
        match self {
            Protocol::Cirr => 0.9,
            Protocol::Circo | Protocol::FashionIq | Protocol::GenericRecall => 0.8,
        }
    }

    pub fn default_ks(self) -> Vec<usize> {
        match self {
            Protocol::GenericRecall | Protocol::Cirr => vec![1, 5, 10, 50],
            Protocol::Circo => vec![5, 10, 25, 50],
            Protocol::FashionIq => vec![10, 50],
        }
    }

    pub fn default_subset_ks(self) -> Vec<usize> {
        match self {
            Protocol::Cirr => vec![1, 2, 3],
            _ => Vec::new(),
        }
    }

    /// Checks protocol-specific instance requirements.
    pub fn check_instance(self, inst: &BenchmarkInstance) -> Result<()> {
        if self == Protocol::Cirr && inst.subset_ids.is_none() {
            return Err(CirError::MissingSubset(inst.query_id.clone()));
        }
        Ok(())
    }
}

impl FromStr for Protocol {
    type Err = CirError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "generic_recall" | "generic" | "recall" => Ok(Protocol::GenericRecall),
            "cirr" => Ok(Protocol::Cirr),
            "circo" => Ok(Protocol::Circo),
            "fashioniq" | "fashion_iq" => Ok(Protocol::FashionIq),
            other => Err(CirError::BadConfig(format!("unknown protocol `{other}`"))),
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub alpha: f64,
    /// Recall@K (or mAP@K for CIRCO) in percent. For FashionIQ this is the
    /// macro average over categories.
    pub per_k_scores: KScores,
    pub n_queries: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset_scores: Option<KScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_category: Option<BTreeMap<String, KScores>>,
}

impl EvalReport {
    fn metric_name(&self) -> &'static str {
        match self.protocol {
            Protocol::Circo => "mAP",
            _ => "R",
        }
    }

    /// Column labels and values in display order.
    pub fn columns(&self) -> Vec<(String, f64)> {
        let mut cols: Vec<(String, f64)> = self
            .per_k_scores
            .iter()
            .map(|(k, v)| (format!("{}@{k}", self.metric_name()), *v))
            .collect();
        if let Some(subset) = &self.subset_scores {
            cols.extend(subset.iter().map(|(k, v)| (format!("Rs@{k}"), *v)));
        }
        cols
    }

    /// Aligned-column rendering for terminals.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, Vec<(String, f64)>)> = Vec::new();
        if let Some(cats) = &self.per_category {
            for (cat, scores) in cats {
                rows.push((
                    cat.clone(),
                    scores.iter().map(|(k, v)| (format!("R@{k}"), *v)).collect(),
                ));
            }
            rows.push(("average".into(), self.columns()));
        } else {
            rows.push((self.protocol.name().into(), self.columns()));
        }
        let headers: Vec<String> = rows[0].1.iter().map(|(h, _)| h.clone()).collect();
        let label_w = rows
            .iter()
            .map(|(l, _)| l.len())
            .chain(["protocol".len()])
            .max()
            .unwrap_or(8);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# protocol={} alpha={} n_queries={}",
            self.protocol, self.alpha, self.n_queries
        );
        let _ = write!(out, "{:<label_w$}", "");
        for h in &headers {
            let _ = write!(out, "  {h:>8}");
        }
        out.push('\n');
        for (label, vals) in rows {
            let _ = write!(out, "{label:<label_w$}");
            for (_, v) in vals {
                let _ = write!(out, "  {v:>8.2}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Defaults to the protocol's K list.
    pub ks: Option<Vec<usize>>,
    /// CIRR subset K list; defaults to 1, 2, 3.
    pub subset_ks: Option<Vec<usize>>,
    /// Overrides each instance's `exclude_reference` flag for open-gallery
    /// ranking.
    pub exclude_reference: Option<bool>,
    pub caption_mode: CaptionMode,
    pub search: SearchOptions,
}

fn check_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(CirError::ZeroK);
    }
    Ok(())
}

fn check_alignment(ranked: &[RankedList], instances: &[BenchmarkInstance]) -> Result<()> {
    if instances.is_empty() {
        return Err(CirError::NoInstances);
    }
    if ranked.len() != instances.len() {
        return Err(CirError::CountMismatch {
            ranked: ranked.len(),
            instances: instances.len(),
        });
    }
    for (r, i) in ranked.iter().zip(instances) {
        if r.query_id != i.query_id {
            return Err(CirError::QueryMismatch {
                expected: i.query_id.clone(),
                found: r.query_id.clone(),
            });
        }
    }
    Ok(())
}

/// Rank of the best-placed target, if any target was retrieved.
fn first_target_rank(list: &RankedList, targets: &HashSet<&str>) -> Option<usize> {
    list.hits
        .iter()
        .position(|h| targets.contains(h.gallery_id.as_str()))
        .map(|p| p + 1)
}

/// Percentage of queries with at least one target among the first K hits.
pub fn recall_at_k(ranked: &[RankedList], instances: &[BenchmarkInstance], ks: &[usize]) -> Result<KScores> {
    check_ks(ks)?;
    check_alignment(ranked, instances)?;
    let firsts: Vec<Option<usize>> = ranked
        .iter()
        .zip(instances)
        .map(|(r, i)| {
            let targets = i.target_ids.iter().map(String::as_str).collect();
            first_target_rank(r, &targets)
        })
        .collect();
    let n = instances.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = firsts.iter().filter(|f| matches!(f, Some(r) if *r <= k)).count();
            (k, 100.0 * hits as f64 / n)
        })
        .collect())
}

/// AP@K for one list: `(1 / min(K, |targets|)) * Σ_{i≤K} P@i · rel(i)`.
pub fn average_precision_at_k(list: &RankedList, targets: &HashSet<&str>, k: usize) -> f64 {
    let mut found = 0usize;
    let mut sum = 0.0;
    for (i, hit) in list.hits.iter().take(k).enumerate() {
        if targets.contains(hit.gallery_id.as_str()) {
            found += 1;
            sum += found as f64 / (i + 1) as f64;
        }
    }
    sum / k.min(targets.len()) as f64
}

/// Mean AP@K in percent.
pub fn map_at_k(ranked: &[RankedList], instances: &[BenchmarkInstance], ks: &[usize]) -> Result<KScores> {
    check_ks(ks)?;
    check_alignment(ranked, instances)?;
    let n = instances.len() as f64;
    let target_sets: Vec<HashSet<&str>> = instances
        .iter()
        .map(|i| i.target_ids.iter().map(String::as_str).collect())
        .collect();
    Ok(ks
        .iter()
        .map(|&k| {
            let total: f64 = ranked
                .iter()
                .zip(&target_sets)
                .map(|(r, t)| average_precision_at_k(r, t, k))
                .sum();
            (k, 100.0 * total / n)
        })
        .collect())
}

/// Which caption embedding stands in for `w` when composing a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CaptionMode {
    /// `caption_id`, falling back to `caption`.
    #[default]
    Primary,
    /// Normalized mean of the `caption_ids` embeddings.
    Average,
    /// Entry `n` (0-based) of `caption_ids`.
    Nth(usize),
}

impl FromStr for CaptionMode {
    type Err = CirError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "primary" => Ok(CaptionMode::Primary),
            "average" | "mean" => Ok(CaptionMode::Average),
            other => other.parse().map(CaptionMode::Nth).map_err(|_| {
                CirError::BadConfig(format!(
                    "unknown caption mode `{other}` (expected primary, average or an index)"
                ))
            }),
        }
    }
}

impl std::fmt::Display for CaptionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CaptionMode::Primary => f.write_str("primary"),
            CaptionMode::Average => f.write_str("average"),
            CaptionMode::Nth(n) => write!(f, "{n}"),
        }
    }
}

impl Serialize for CaptionMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// The text embedding an instance contributes under `mode`.
pub fn caption_embedding(
    text_bank: &EmbeddingBank,
    inst: &BenchmarkInstance,
    mode: CaptionMode,
) -> Result<UnitEmbedding> {
    let invalid = |reason: String| CirError::InvalidInstance {
        query_id: inst.query_id.clone(),
        reason,
    };
    let variants = || {
        inst.caption_ids
            .as_deref()
            .ok_or_else(|| invalid(format!("caption mode `{mode}` needs caption_ids")))
    };
    match mode {
        CaptionMode::Primary => {
            let key = inst
                .caption_key()
                .ok_or_else(|| invalid("neither caption_id nor caption is set".into()))?;
            text_bank.get(key)
        }
        CaptionMode::Nth(n) => {
            let key = variants()?
                .get(n)
                .ok_or_else(|| invalid(format!("no caption at index {n}")))?;
            text_bank.get(key)
        }
        CaptionMode::Average => {
            let mut sum = vec![0.0; text_bank.dim()];
            for key in variants()? {
                for (s, x) in sum.iter_mut().zip(text_bank.get(key)?.as_slice()) {
                    *s += x;
                }
            }
            normalize(&sum)
        }
    }
}

/// Slerp-composes every instance's reference image with its caption.
pub fn compose_queries(
    image_bank: &EmbeddingBank,
    text_bank: &EmbeddingBank,
    instances: &[BenchmarkInstance],
    alpha: BalancingScalar,
) -> Result<Vec<(String, UnitEmbedding)>> {
    compose_queries_with(image_bank, text_bank, instances, alpha, CaptionMode::Primary)
}

pub fn compose_queries_with(
    image_bank: &EmbeddingBank,
    text_bank: &EmbeddingBank,
    instances: &[BenchmarkInstance],
    alpha: BalancingScalar,
    mode: CaptionMode,
) -> Result<Vec<(String, UnitEmbedding)>> {
    instances
        .iter()
        .map(|inst| {
            let v = image_bank.get(&inst.reference_id)?;
            let w = caption_embedding(text_bank, inst, mode)?;
            Ok((inst.query_id.clone(), slerp(&v, &w, alpha)?))
        })
        .collect()
}

/// CIRR subset protocol: each composed query is ranked only against its
/// subset, with the reference image removed.
pub fn subset_recall_at_k(
    image_bank: &EmbeddingBank,
    text_bank: &EmbeddingBank,
    gallery: &EmbeddingBank,
    instances: &[BenchmarkInstance],
    alpha: BalancingScalar,
    ks: &[usize],
) -> Result<KScores> {
    check_ks(ks)?;
    if instances.is_empty() {
        return Err(CirError::NoInstances);
    }
    if let Some(inst) = instances.iter().find(|i| i.subset_ids.is_none()) {
        return Err(CirError::MissingSubset(inst.query_id.clone()));
    }
    let composed = compose_queries(image_bank, text_bank, instances, alpha)?;
    let ranked = subset_rankings(gallery, instances, &composed)?;
    recall_at_k(&ranked, instances, ks)
}

fn subset_rankings(
    gallery: &EmbeddingBank,
    instances: &[BenchmarkInstance],
    composed: &[(String, UnitEmbedding)],
) -> Result<Vec<RankedList>> {
    instances
        .iter()
        .zip(composed)
        .map(|(inst, (qid, q))| {
            let subset = inst
                .subset_ids
                .as_deref()
                .ok_or_else(|| CirError::MissingSubset(inst.query_id.clone()))?;
            let exclude = HashSet::from([inst.reference_id.clone()]);
            Ok(RankedList::new(
                qid.clone(),
                rank_candidates(q, gallery, subset, &exclude)?,
            ))
        })
        .collect()
}

/// Composes every query at `alpha`, ranks the gallery, and applies the
/// protocol's metric.
pub fn evaluate(
    protocol: Protocol,
    image_bank: &EmbeddingBank,
    text_bank: &EmbeddingBank,
    gallery: &EmbeddingBank,
    instances: &[BenchmarkInstance],
    alpha: BalancingScalar,
    options: &EvalOptions,
) -> Result<EvalReport> {
    if instances.is_empty() {
        return Err(CirError::NoInstances);
    }
    for inst in instances {
        protocol.check_instance(inst)?;
    }
    let ks = options.ks.clone().unwrap_or_else(|| protocol.default_ks());
    check_ks(&ks)?;
    let k_max = *ks.iter().max().expect("non-empty ks");

    let composed = compose_queries_with(image_bank, text_bank, instances, alpha, options.caption_mode)?;
    let exclusions: HashMap<String, HashSet<String>> = instances
        .iter()
        .filter(|i| options.exclude_reference.unwrap_or(i.exclude_reference))
        .map(|i| (i.query_id.clone(), HashSet::from([i.reference_id.clone()])))
        .collect();
    let ranked = batch_top_k(&composed, gallery, k_max, &exclusions, options.search)?;

    let mut report = EvalReport {
        protocol,
        alpha: alpha.get(),
        per_k_scores: KScores::new(),
        n_queries: instances.len(),
        subset_scores: None,
        per_category: None,
    };
    match protocol {
        Protocol::GenericRecall => {
            report.per_k_scores = recall_at_k(&ranked, instances, &ks)?;
        }
        Protocol::Cirr => {
            report.per_k_scores = recall_at_k(&ranked, instances, &ks)?;
            let subset_ks = options
                .subset_ks
                .clone()
                .unwrap_or_else(|| protocol.default_subset_ks());
            check_ks(&subset_ks)?;
            let subset_ranked = subset_rankings(gallery, instances, &composed)?;
            report.subset_scores = Some(recall_at_k(&subset_ranked, instances, &subset_ks)?);
        }
        Protocol::Circo => {
            report.per_k_scores = map_at_k(&ranked, instances, &ks)?;
        }
        Protocol::FashionIq => {
            let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for (i, inst) in instances.iter().enumerate() {
                let cat = inst.category.clone().unwrap_or_else(|| "all".into());
                groups.entry(cat).or_default().push(i);
            }
            let mut per_category = BTreeMap::new();
            for (cat, idx) in groups {
                let r: Vec<RankedList> = idx.iter().map(|&i| ranked[i].clone()).collect();
                let ins: Vec<BenchmarkInstance> = idx.iter().map(|&i| instances[i].clone()).collect();
                per_category.insert(cat, recall_at_k(&r, &ins, &ks)?);
            }
            let n_cat = per_category.len() as f64;
            report.per_k_scores = ks
                .iter()
                .map(|&k| {
                    let sum: f64 = per_category.values().map(|s: &KScores| s[&k]).sum();
                    (k, sum / n_cat)
                })
                .collect();
            report.per_category = Some(per_category);
        }
    }
    Ok(report)
}

/// One [`evaluate`] per alpha, over the same queries.
pub fn alpha_sweep(
    protocol: Protocol,
    image_bank: &EmbeddingBank,
    text_bank: &EmbeddingBank,
    gallery: &EmbeddingBank,
    instances: &[BenchmarkInstance],
    alphas: &[f64],
    options: &EvalOptions,
) -> Result<Vec<EvalReport>> {
    let alphas: Vec<BalancingScalar> = alphas.iter().map(|&a| BalancingScalar::new(a)).collect::<Result<_>>()?;
    alphas
        .into_iter()
        .map(|a| evaluate(protocol, image_bank, text_bank, gallery, instances, a, options))
        .collect()
}

/// `0.0, 0.1, ..., 1.0` computed as `i / 10` so the grid points are exact.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Tab-separated sweep table: a header row, then one row per alpha.
pub fn sweep_tsv(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let Some(first) = reports.first() else {
        return out;
    };
    out.push_str("alpha");
    for (name, _) in first.columns() {
        out.push('\t');
        out.push_str(&name);
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{}", r.alpha);
        for (_, v) in r.columns() {
            let _ = write!(out, "\t{v:.4}");
        }
        out.push('\n');
    }
    out
}
