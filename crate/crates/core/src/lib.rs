//! Multi-label image annotation head: a label chain driven by an LSTM whose
//! output is scored against label embeddings in a joint space with the image
//! representation.
//!
//! Image features are supplied precomputed. The crate covers the model,
//! training, beam-search decoding, a feature-only baseline, the evaluation
//! metrics and a synthetic benchmark with planted label co-occurrence.

pub mod baseline;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod decode;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod train;

pub use checkpoint::Checkpoint;
pub use data::{Dataset, Example, LabelVocab};
pub use decode::{beam_search, greedy_decode, predict_topk, BeamConfig, PredictionPath};
pub use error::{Error, Result};
pub use model::{Hyper, LabelId, ModelParams};
pub use train::{fit, TrainConfig};
