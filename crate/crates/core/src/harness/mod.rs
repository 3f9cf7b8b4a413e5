//! Training and evaluation of the reference CNN, plus the adapter for
//! externally trained classifiers.

mod backend;
mod config;
mod data;
mod train;

pub use backend::{external_backend_run, read_results, write_job, FoldScore, RESULTS_FILE, RESULTS_HEADER};
pub use config::{Protocol, RunConfig, TrainMode};
pub use data::{batch_sizes, SampleSet};
pub use train::{
    early_stop, evaluate, model_spec, prepare_model, run_epochs, run_kfold, train, EpochRecord, EvalResult,
    FoldRun, StopReason, TrainRecord, SCRATCH_DROPOUT,
};

use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("data unavailable: {0}")]
    DataUnavailable(String),
    #[error("backend failed: {0}")]
    BackendFailed(String),
    #[error("malformed results: {0}")]
    MalformedResults(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}
