//! Manifest maintenance, holdout splits and stratified k-fold plans.

mod apportion;
mod class;
mod manifest;
mod split;
mod verify;

use std::path::Path;

use thiserror::Error;

pub use apportion::{apportion, largest_remainder, percent_weights};
pub use class::{ClassLabel, NUM_CLASSES, REFERENCE_RAW_COUNTS};
pub use manifest::{build_manifest, LabelTable, Manifest, ManifestRow, Split, Verdict, MANIFEST_HEADER};
pub use split::{
    fold_file_name, holdout_split, kfold_plan, Fold, FoldPlan, FoldPlanMeta, SplitAssignment, SplitOptions,
    SplitRatios, FOLD_PLAN_META,
};
pub use verify::{verify_folds, verify_holdout, verify_split, Assignment, VerificationReport};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("source image {0} has no class label")]
    UnlabeledSource(String),
    #[error("duplicate patch id: {0}")]
    DuplicatePatchId(String),
    #[error("{0}")]
    InvalidRatios(String),
    #[error("no eligible rows to split")]
    NoEligibleRows,
    #[error("class {class} has {rows} eligible rows, needs at least {needed}")]
    EmptyClass {
        class: ClassLabel,
        rows: usize,
        needed: usize,
    },
    #[error("class {class} has {rows} eligible rows, fewer than k = {k}")]
    ClassSmallerThanK { class: ClassLabel, rows: usize, k: usize },
}

impl DatasetError {
    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        DatasetError::Io(format!("{}: {err}", path.display()))
    }
}
