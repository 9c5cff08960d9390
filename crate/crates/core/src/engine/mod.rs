//! Training loop, learning-rate schedule, checkpoints and evaluation.

mod config;
mod eval;
mod train;

pub use config::{TrainConfig, SCHEMA_VERSION};
pub use eval::{evaluate, predict, score_dirs, score_maps, Evaluation};
pub use train::{load_model, EpochSummary, Progress, StepLog, Trainer};
