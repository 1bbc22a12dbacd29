//! The anchored adapter training loop.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bank::{EmbeddingBank, Modality};
use crate::error::{CirError, Result};
use crate::geometry::BalancingScalar;
use crate::metrics::{evaluate, BenchmarkInstance, EvalOptions, Protocol};
use crate::tat::gap::{modality_gap, GapStats};
use crate::tat::loss::{contrastive_grads, contrastive_loss_scaled};
use crate::tat::optim::{optimizer_step, AdamW, AdapterOptState};
use crate::tat::synth::{PairSplit, SyntheticDataset};
use crate::tat::tower::{embed_all, ForwardCache, LoraGrads, TowerParams};

/// Seed for the unpaired-cosine sample in per-epoch gap statistics.
const GAP_SAMPLE_SEED: u64 = 0x0067_6170;

/// Which tower(s) receive adapter updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchoring {
    /// Text side frozen, image adapter trained.
    TextAnchor,
    /// Image side frozen, text adapter trained.
    ImageAnchor,
    /// Both adapters trained.
    NoneAnchor,
}

impl Anchoring {
    pub fn trains_image(self) -> bool {
        matches!(self, Anchoring::TextAnchor | Anchoring::NoneAnchor)
    }

    pub fn trains_text(self) -> bool {
        matches!(self, Anchoring::ImageAnchor | Anchoring::NoneAnchor)
    }

    pub fn name(self) -> &'static str {
        match self {
            Anchoring::TextAnchor => "text_anchor",
            Anchoring::ImageAnchor => "image_anchor",
            Anchoring::NoneAnchor => "none_anchor",
        }
    }
}

impl std::str::FromStr for Anchoring {
    type Err = CirError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text_anchor" | "text" => Ok(Anchoring::TextAnchor),
            "image_anchor" | "image" => Ok(Anchoring::ImageAnchor),
            "none_anchor" | "none" => Ok(Anchoring::NoneAnchor),
            other => Err(CirError::BadConfig(format!("unknown anchoring `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    /// Similarities are multiplied by this inside the softmax (1 / temperature).
    pub logit_scale: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub anchoring: Anchoring,
    pub rank: usize,
    pub lora_alpha: f64,
    pub dropout_p: f64,
    /// Balancing scalar for the held-out composed-retrieval probe.
    pub probe_alpha: f64,
}

impl Default for TrainConfig {
    /// Desk-scale settings for the synthetic experiment. Temperature, weight
    /// decay and dropout follow the full-scale recipe; learning rate and
    /// adapter size are scaled for a 32-dimensional tower.
    fn default() -> Self {
        Self {
            logit_scale: 1.0 / 0.07,
            learning_rate: 1e-2,
            weight_decay: 0.01,
            epochs: 30,
            batch_size: 100,
            seed: 42,
            anchoring: Anchoring::TextAnchor,
            rank: 4,
            lora_alpha: 4.0,
            dropout_p: 0.1,
            probe_alpha: 0.8,
        }
    }
}

impl TrainConfig {
    /// Full-scale recipe: rank 16, lora_alpha 16, dropout 0.1, AdamW with
    /// lr 1e-4 and weight decay 0.01, logit scale 1/0.07, batch 1024, one epoch.
    pub fn full_scale() -> Self {
        Self {
            logit_scale: 1.0 / 0.07,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            epochs: 1,
            batch_size: 1024,
            seed: 42,
            anchoring: Anchoring::TextAnchor,
            rank: 16,
            lora_alpha: 16.0,
            dropout_p: 0.1,
            probe_alpha: 0.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CirError::BadConfig(m.to_string()));
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) {
            return bad("logit_scale must be positive (tau > 0)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.probe_alpha) {
            return bad("probe_alpha must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Eval-mode loss over the training split in fixed sequential batches.
    pub loss: f64,
    pub held_out: GapStats,
    /// Recall@1 (percent) of the held-out composed-retrieval probe.
    pub held_out_slerp_r1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub anchoring: Anchoring,
    pub image_tower: TowerParams,
    pub text_tower: TowerParams,
    /// Epoch 0 is the untrained state.
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn initial(&self) -> &EpochRecord {
        &self.history[0]
    }

    pub fn last(&self) -> &EpochRecord {
        self.history.last().expect("history always has epoch 0")
    }

    /// The towers that were trained under this anchoring, with their names.
    pub fn trained_towers(&self) -> Vec<(&'static str, &TowerParams)> {
        let mut out = Vec::new();
        if self.anchoring.trains_image() {
            out.push(("image", &self.image_tower));
        }
        if self.anchoring.trains_text() {
            out.push(("text", &self.text_tower));
        }
        out
    }
}

fn anchor_inputs(split: &PairSplit) -> Vec<Vec<f64>> {
    split.text_anchors.iter().map(|w| w.as_slice().to_vec()).collect()
}

fn training_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Initial image and text towers (identity bases, zero `lora_b`).
pub fn init_towers(config: &TrainConfig, dim: usize) -> Result<(TowerParams, TowerParams)> {
    let mut rng = training_rng(config.seed);
    let image = TowerParams::identity(dim, config.rank, config.lora_alpha, config.dropout_p, &mut rng)?;
    let text = TowerParams::identity(dim, config.rank, config.lora_alpha, config.dropout_p, &mut rng)?;
    Ok((image, text))
}

/// Mean eval-mode loss over `split` in sequential chunks of `batch_size`.
fn split_loss(image: &TowerParams, text: &TowerParams, split: &PairSplit, config: &TrainConfig) -> Result<f64> {
    let v = embed_all(image, &split.image_inputs)?;
    let w = embed_all(text, &anchor_inputs(split))?;
    let mut total = 0.0;
    let mut batches = 0usize;
    for (vb, wb) in v.chunks(config.batch_size).zip(w.chunks(config.batch_size)) {
        if vb.len() < 2 {
            continue;
        }
        total += contrastive_loss_scaled(vb, wb, config.logit_scale)?.total();
        batches += 1;
    }
    if batches == 0 {
        return Err(CirError::BadConfig("training split yields no batch of size ≥ 2".into()));
    }
    Ok(total / batches as f64)
}

/// Held-out composed retrieval: the gallery is the held-out images, each
/// query composes a second view of the same concept with its text, and the
/// target is the gallery image of that concept.
pub fn slerp_probe(image: &TowerParams, text: &TowerParams, split: &PairSplit, alpha: f64) -> Result<f64> {
    let dim = image.d_out();
    let gallery_vecs = embed_all(image, &split.image_inputs)?;
    let ref_vecs = embed_all(image, &split.reference_inputs)?;
    let text_vecs = embed_all(text, &anchor_inputs(split))?;
    let gallery = EmbeddingBank::from_entries(
        dim,
        Modality::Image,
        gallery_vecs
            .into_iter()
            .enumerate()
            .map(|(i, v)| (format!("img-{i:05}"), v)),
    )?;
    let refs = EmbeddingBank::from_entries(
        dim,
        Modality::Image,
        ref_vecs
            .into_iter()
            .enumerate()
            .map(|(i, v)| (format!("ref-{i:05}"), v)),
    )?;
    let texts = EmbeddingBank::from_entries(
        dim,
        Modality::Text,
        text_vecs
            .into_iter()
            .enumerate()
            .map(|(i, v)| (format!("txt-{i:05}"), v)),
    )?;
    let instances = (0..split.len())
        .map(|i| {
            BenchmarkInstance::new(
                format!("q-{i:05}"),
                format!("ref-{i:05}"),
                format!("txt-{i:05}"),
                vec![format!("img-{i:05}")],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let options = EvalOptions {
        ks: Some(vec![1]),
        ..Default::default()
    };
    let report = evaluate(
        Protocol::GenericRecall,
        &refs,
        &texts,
        &gallery,
        &instances,
        BalancingScalar::new(alpha)?,
        &options,
    )?;
    Ok(report.per_k_scores[&1])
}

/// Gap statistics of the two towers on `split`.
pub fn split_gap(image: &TowerParams, text: &TowerParams, split: &PairSplit) -> Result<GapStats> {
    let v = embed_all(image, &split.image_inputs)?;
    let w = embed_all(text, &anchor_inputs(split))?;
    modality_gap(&v, &w, GAP_SAMPLE_SEED)
}

fn epoch_record(
    epoch: usize,
    image: &TowerParams,
    text: &TowerParams,
    data: &SyntheticDataset,
    config: &TrainConfig,
) -> Result<EpochRecord> {
    Ok(EpochRecord {
        epoch,
        loss: split_loss(image, text, &data.train, config)?,
        held_out: split_gap(image, text, &data.held_out)?,
        held_out_slerp_r1: slerp_probe(image, text, &data.held_out, config.probe_alpha)?,
    })
}

fn forward_batch(
    tower: &TowerParams,
    inputs: &[&Vec<f64>],
    train_mode: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ForwardCache>> {
    inputs
        .iter()
        .map(|x| {
            let gain = if train_mode {
                tower.sample_branch_gain(rng)
            } else {
                tower.eval_branch_gain()
            };
            tower.forward_with_gain(x, gain)
        })
        .collect()
}

fn backward_batch(tower: &TowerParams, caches: &[ForwardCache], grads: &[DVector<f64>]) -> LoraGrads {
    let mut out = LoraGrads::zeros_like(tower);
    for (c, g) in caches.iter().zip(grads) {
        tower.backward(c, g, &mut out);
    }
    out
}

/// Trains the adapter(s) selected by `config.anchoring` on `data.train`.
///
/// Deterministic for a fixed seed: batch order and dropout masks come from a
/// single seeded stream and every reduction runs in a fixed order.
pub fn train(config: &TrainConfig, data: &SyntheticDataset) -> Result<TrainOutcome> {
    config.validate()?;
    let dim = data.dim();
    let (mut image, mut text) = init_towers(config, dim)?;
    // init_towers consumed the head of the stream; continue from a fresh
    // stream so batch order is independent of adapter size.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);

    let optimizer = AdamW::new(config.learning_rate, config.weight_decay);
    let mut image_state = AdapterOptState::new(&image);
    let mut text_state = AdapterOptState::new(&text);
    let train_anchors = anchor_inputs(&data.train);

    let mut history = vec![epoch_record(0, &image, &text, data, config)?];
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let xs: Vec<&Vec<f64>> = batch.iter().map(|&i| &data.train.image_inputs[i]).collect();
            let ts: Vec<&Vec<f64>> = batch.iter().map(|&i| &train_anchors[i]).collect();
            let img_c = forward_batch(&image, &xs, config.anchoring.trains_image(), &mut rng)?;
            let txt_c = forward_batch(&text, &ts, config.anchoring.trains_text(), &mut rng)?;
            let v: Vec<&[f64]> = img_c.iter().map(|c| c.y.as_slice()).collect();
            let w: Vec<&[f64]> = txt_c.iter().map(|c| c.y.as_slice()).collect();
            let (_, grad_v, grad_w) = contrastive_grads(&v, &w, config.logit_scale)?;
            if config.anchoring.trains_image() {
                let g = backward_batch(&image, &img_c, &grad_v);
                optimizer_step(&mut image, &g, &mut image_state, &optimizer);
            }
            if config.anchoring.trains_text() {
                let g = backward_batch(&text, &txt_c, &grad_w);
                optimizer_step(&mut text, &g, &mut text_state, &optimizer);
            }
        }
        history.push(epoch_record(epoch, &image, &text, data, config)?);
    }
    Ok(TrainOutcome {
        anchoring: config.anchoring,
        image_tower: image,
        text_tower: text,
        history,
    })
}
