//! Desk-scale experiment harness: a small MLP, synthetic data, the training
//! loop and grid comparisons.

pub mod compare;
pub mod config;
pub mod data;
pub mod mlp;
pub mod train;

pub use compare::{write_csv, write_csv_file, CellResult, CompareMatrix};
pub use config::{ExperimentConfig, OptimizerKind, OptimizerSpec, OutputSpec, SEED_ENV};
pub use data::{generate_dataset, Dataset, DatasetSpec};
pub use mlp::{accuracy, cross_entropy, MlpModel};
pub use train::{run, train, EvalRecord, RunOptions, RunOutcome};
