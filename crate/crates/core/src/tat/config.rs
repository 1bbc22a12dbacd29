//! `key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment. A single `seed` drives both
//! data generation and training. `tau` is accepted as an alternative to
//! `logit_scale` and sets it to `1 / tau`.

use std::str::FromStr;

use serde::Serialize;

use crate::error::{CirError, Result};
use crate::tat::synth::SyntheticConfig;
use crate::tat::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub data: SyntheticConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let data = SyntheticConfig {
            seed: train.seed,
            ..SyntheticConfig::default()
        };
        Self { train, data }
    }
}

pub const KEYS: &[&str] = &[
    "logit_scale",
    "tau",
    "learning_rate",
    "weight_decay",
    "epochs",
    "batch_size",
    "seed",
    "anchoring",
    "rank",
    "lora_alpha",
    "dropout",
    "probe_alpha",
    "n_pairs",
    "dim",
    "latent_dim",
    "gap_rotation_angle",
    "gap_rotation_deg",
    "noise_sigma",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CirError::BadConfig(format!("cannot parse `{value}` for `{key}`")))
}

impl ExperimentConfig {
    /// Sets one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let t = &mut self.train;
        let d = &mut self.data;
        match key.trim() {
            "logit_scale" => t.logit_scale = parse(key, value)?,
            "tau" => {
                let tau: f64 = parse(key, value)?;
                if tau.is_nan() || tau <= 0.0 {
                    return Err(CirError::BadConfig("tau must be positive".into()));
                }
                t.logit_scale = 1.0 / tau;
            }
            "learning_rate" | "lr" => t.learning_rate = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "seed" => {
                t.seed = parse(key, value)?;
                d.seed = t.seed;
            }
            "anchoring" => t.anchoring = value.parse()?,
            "rank" => t.rank = parse(key, value)?,
            "lora_alpha" => t.lora_alpha = parse(key, value)?,
            "dropout" | "dropout_p" => t.dropout_p = parse(key, value)?,
            "probe_alpha" => t.probe_alpha = parse(key, value)?,
            "n_pairs" => d.n_pairs = parse(key, value)?,
            "dim" => d.dim = parse(key, value)?,
            "latent_dim" => d.latent_dim = parse(key, value)?,
            "gap_rotation_angle" => d.gap_rotation_angle = parse(key, value)?,
            "gap_rotation_deg" => {
                let deg: f64 = parse(key, value)?;
                d.gap_rotation_angle = deg.to_radians();
            }
            "noise_sigma" => d.noise_sigma = parse(key, value)?,
            other => return Err(CirError::BadConfig(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CirError::BadConfig(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(key, value)
                .map_err(|e| CirError::BadConfig(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.data.validate()?;
        if self.train.rank > self.data.dim {
            return Err(CirError::BadConfig("rank exceeds dim".into()));
        }
        Ok(())
    }
}
