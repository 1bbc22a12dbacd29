//! Text-anchored tuning at desk scale.
//!
//! Two linear towers (identity base plus a low-rank adapter, followed by L2
//! normalization) are trained with the symmetric in-batch contrastive loss.
//! Under [`Anchoring::TextAnchor`] only the image adapter moves, so image
//! embeddings migrate toward fixed text anchors.

pub mod blob;
pub mod config;
pub mod gap;
pub mod loss;
pub mod optim;
pub mod synth;
pub mod tower;
pub mod train;

pub use blob::AdapterBlob;
pub use config::ExperimentConfig;
pub use gap::{modality_gap, modality_gap_banks, GapStats};
pub use loss::{contrastive_grads, contrastive_loss, grad_contrastive, LossParts, TrainBatch};
pub use optim::{optimizer_step, AdamW, AdapterOptState};
pub use synth::{gen_synthetic, SyntheticConfig, SyntheticDataset};
pub use tower::{forward_tower, LoraGrads, TowerParams};
pub use train::{train, Anchoring, EpochRecord, TrainConfig, TrainOutcome};
