//! Per-fold aggregation, published reference tables and report rendering.

mod reference;
mod report;

pub use reference::{
    audit_table, published_reports, published_tables, ColumnAudit, PublishedColumn, PublishedTable, PRINT_TOLERANCE,
};
pub use report::{
    export_curves, read_folds_csv, read_results_dir, render_report, write_curves, write_folds_csv, ReportFiles,
    RunReport, CURVES_HEADER, FOLDS_HEADER, FOLDS_SUFFIX, SUMMARY_HEADER,
};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no fold results")]
    EmptyResults,
    #[error("invalid fold result: {0}")]
    InvalidResult(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    /// 1-based.
    pub fold: usize,
    pub loss: f64,
    /// Percent.
    pub accuracy: f64,
}

impl FoldResult {
    pub fn new(fold: usize, loss: f64, accuracy: f64) -> Result<Self, MetricsError> {
        if !(0.0..=100.0).contains(&accuracy) {
            return Err(MetricsError::InvalidResult(format!("fold {fold}: accuracy {accuracy}% outside [0, 100]")));
        }
        if !(loss >= 0.0 && loss.is_finite()) {
            return Err(MetricsError::InvalidResult(format!("fold {fold}: loss {loss}")));
        }
        Ok(Self { fold, loss, accuracy })
    }

    /// From a 0-based fold index and an accuracy fraction.
    pub fn from_fraction(index: usize, loss: f64, accuracy: f64) -> Result<Self, MetricsError> {
        Self::new(index + 1, loss, accuracy * 100.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub average_loss: f64,
    pub average_accuracy: f64,
    /// Population standard deviation (divisor N) of fold accuracies.
    pub std_accuracy: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard deviation with divisor `N`.
pub fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

pub fn fold_stats(results: &[FoldResult]) -> Result<RunSummary, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let losses: Vec<f64> = results.iter().map(|r| r.loss).collect();
    let accs: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    let lo = accs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = accs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RunSummary {
        average_loss: mean(&losses),
        average_accuracy: mean(&accs).clamp(lo, hi),
        std_accuracy: population_std(&accs),
    })
}
