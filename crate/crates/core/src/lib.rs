//! End-to-end entity linking for short questions.
//!
//! A question is encoded into per-token vectors; every span up to a maximum
//! length gets a mention probability from three learned scoring vectors,
//! and the mean vector of each kept span is matched against a frozen entity
//! embedding matrix by inner product. Scoring heads and the question-side
//! projection are trained jointly with hard negatives mined from a
//! maximum-inner-product index over the same frozen matrix.

pub mod binary;
pub mod catalog;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evalmetrics;
pub mod index;
pub mod linker;
pub mod matrix;
pub mod model;
pub mod pipeline;
pub mod spans;
pub mod synth;
pub mod training;

pub use catalog::{EntityCatalog, EntityRecord};
pub use decoder::{Decoder, DecoderConfig, LinkedPrediction};
pub use encoder::{QuestionEmbeddings, SyntheticEncoder, TokenizedQuestion};
pub use error::{ElqError, Result};
pub use index::{HnswParams, IndexMode, MipsIndex};
pub use matrix::Matrix;
pub use model::{Checkpoint, Model};
pub use spans::{HeadWeights, ScoredMention, Span};
pub use training::{LossReport, TrainConfig, TrainingExample};
pub use evalmetrics::{EvalReport, MatchMode};
pub use pipeline::{BenchReport, EvalMode};
pub use synth::SyntheticWorkloadSpec;
