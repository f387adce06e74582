//! Training loop, evaluation, checkpoints and multi-seed aggregation.

mod checkpoint;
mod config;
mod curve;
mod suite;
mod train;

pub use checkpoint::Checkpoint;
pub use config::{Profile, TrainConfig, ZeroReg};
pub use curve::{mean_std, moving_average, EvalRecord, LearningCurve, CURVE_HEADER};
pub use suite::{aggregate, parse_seeds, run_suite, SeedRun, SuiteRow, SuiteSummary};
pub use train::{evaluate, run_training, EvalStats, LrEventRecord, RunCounters, Trainer};
