//! Training loop, evaluation, experiment protocols and their I/O.

pub mod checkpoint;
pub mod config;
pub mod experiment;
pub mod report;
pub mod table;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{ExperimentConfig, LabConfig, TrainConfig, TrainSection};
pub use experiment::{ablation_methods, loss_study_losses, run_experiment, ExperimentKind, Method};
pub use table::{ResultsTable, TableRow};
pub use train::{
    difficulty_histogram, evaluate, resume, train, train_with_eval, DifficultyHistogram, EpochRecord, RunRecord,
    TrainState,
};
