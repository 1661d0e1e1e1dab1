//! Croppable knowledge-graph embeddings.
//!
//! One embedding table per symbol kind is trained so that every prefix of
//! its columns (a *sub-model*) is itself a usable model. Cropping to a
//! smaller width is plain column truncation.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod objective;
pub mod optim;
pub mod report;
pub mod sampler;
pub mod scoring;
pub mod store;
pub mod synth;
pub mod train;

pub use data::{Dataset, FilterIndex, Split, Triple, TripleOrder};
pub use error::{Error, Result};
pub use eval::{MetricsReport, RankOutcome};
pub use objective::{Ablation, LossBreakdown, MedObjective, PairMode};
pub use store::{CroppableModel, DimensionSchedule, Norm, ScoreFunction, ScoreKind};
pub use train::{TrainConfig, TrainOutcome};
