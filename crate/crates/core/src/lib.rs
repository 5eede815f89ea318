//! Highway recurrent transformer for dialogue response selection.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`], [`tape`], [`params`], [`optim`]: dense `f64` tensors,
//!   tape-based reverse-mode differentiation and Adam.
//! - [`attention`]: multi-head attention and highway attention.
//! - [`encoder`]: transformer encoder blocks with sinusoidal positions.
//! - [`model`]: utterance recurrence, bidirectional matching, pooling and
//!   candidate scoring.
//! - [`loss`], [`metrics`], [`sampling`], [`train`]: objectives, retrieval
//!   metrics, negative sampling and the training loop.
//! - [`data`], [`config`], [`checkpoint`]: corpus files, preprocessing,
//!   configuration and model persistence.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod sampling;
pub mod tape;
pub mod tensor;
pub mod train;

pub use attention::{AttentionOptions, HighwayParams, HighwayProbe, MultiHeadParams};
pub use config::{Config, LossConfig, LossKind, ModelConfig, Pooling, TrainConfig, Variant};
pub use data::{DialogueRecord, FeatureTable, Utterance, Vocabulary};
pub use error::{Error, Result};
pub use metrics::EvalReport;
pub use model::{DialogueState, Model, ModelParams, RankedResult};
pub use optim::{AdamConfig, AdamState};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub use train::{LogEntry, TrainOutcome};
