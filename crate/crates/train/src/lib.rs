//! Training, evaluation and experiment drivers for the tomography
//! reconstructors.

pub mod config;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod trainer;

pub use config::TrainConfig;
pub use error::{Result, TrainError};
pub use eval::EvalMetrics;
pub use trainer::{train, TrainOutcome, TrainReport, TrainSummary};
