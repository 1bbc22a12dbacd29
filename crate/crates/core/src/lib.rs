//! Composed image retrieval by spherical interpolation of image and text
//! embeddings, plus a small text-anchored adapter trainer that shows how
//! realigning the image tower closes the modality gap.

pub mod bank;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod search;
pub mod synthetic;
pub mod tat;
pub mod tsv;

pub use bank::{EmbeddingBank, Modality, RawBank, ValidationReport};
pub use error::{CirError, Result};
pub use geometry::{angle, cosine, normalize, slerp, BalancingScalar, UnitEmbedding};
pub use metrics::{BenchmarkInstance, CaptionMode, EvalOptions, EvalReport, Protocol};
pub use search::{batch_top_k, rank_of, top_k, Hit, RankedList, SearchOptions};
