//! File-protocol adapter for classifiers trained outside this crate.
//!
//! The harness writes a job directory, runs the backend command with the
//! directory as its last argument, and reads back per-fold scores:
//!
//! ```text
//! job/config                          run config (TOML)
//! job/fold_<i>/{train,validation,test}.csv   patch_id,path,class
//! job/results.csv                     fold,loss,accuracy   (fold 0..k-1, accuracy in [0, 1])
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::HarnessError;
use crate::dataset::{FoldPlan, Manifest, Split};
use crate::filter::patch_path;

pub const RESULTS_FILE: &str = "results.csv";
pub const RESULTS_HEADER: [&str; 3] = ["fold", "loss", "accuracy"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    /// 0-based fold index.
    pub fold: usize,
    pub loss: f64,
    /// Fraction in `[0, 1]`.
    pub accuracy: f64,
}

#[derive(Serialize)]
struct JobRow<'a> {
    patch_id: &'a str,
    path: String,
    class: &'a str,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

/// Write the job directory for `plan`.
pub fn write_job(
    config: &RunConfig,
    plan: &FoldPlan,
    manifest: &Manifest,
    patch_dir: &Path,
    job: &Path,
) -> Result<(), HarnessError> {
    fs::create_dir_all(job).map_err(|e| io_err(job, e))?;
    let config_path = job.join("config");
    fs::write(&config_path, config.to_toml_string()).map_err(|e| io_err(&config_path, e))?;
    let patch_dir = fs::canonicalize(patch_dir).unwrap_or_else(|_| patch_dir.to_path_buf());
    for fold in &plan.folds {
        let dir = job.join(format!("fold_{}", fold.index));
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        for split in Split::PARTS {
            let path = dir.join(format!("{}.csv", split.as_str()));
            let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
            w.write_record(["patch_id", "path", "class"]).map_err(|e| io_err(&path, e))?;
            for id in fold.part(split) {
                let row = manifest
                    .get(id)
                    .ok_or_else(|| HarnessError::DataUnavailable(format!("{id}: not in manifest")))?;
                w.serialize(JobRow {
                    patch_id: id,
                    path: patch_path(&patch_dir, id).display().to_string(),
                    class: row.class.code(),
                })
                .map_err(|e| io_err(&path, e))?;
            }
            w.flush().map_err(|e| io_err(&path, e))?;
        }
    }
    Ok(())
}

/// Parse and validate a results file for a `k`-fold job.
pub fn read_results(path: &Path, k: usize) -> Result<Vec<FoldScore>, HarnessError> {
    let malformed = |msg: String| HarnessError::MalformedResults(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| malformed(e.to_string()))?;
    let header = reader.headers().map_err(|e| malformed(e.to_string()))?;
    if header.iter().map(str::trim).ne(RESULTS_HEADER) {
        return Err(malformed(format!("header must be {}", RESULTS_HEADER.join(","))));
    }
    let mut scores: Vec<FoldScore> = Vec::new();
    for row in reader.deserialize::<FoldScore>() {
        let s = row.map_err(|e| malformed(e.to_string()))?;
        if s.fold >= k {
            return Err(malformed(format!("fold {} outside 0..{k}", s.fold)));
        }
        if !(s.loss.is_finite() && s.loss >= 0.0) {
            return Err(malformed(format!("fold {}: loss {} not a finite non-negative value", s.fold, s.loss)));
        }
        if !(0.0..=1.0).contains(&s.accuracy) {
            return Err(malformed(format!("fold {}: accuracy {} outside [0, 1]", s.fold, s.accuracy)));
        }
        if scores.iter().any(|p| p.fold == s.fold) {
            return Err(malformed(format!("fold {} reported twice", s.fold)));
        }
        scores.push(s);
    }
    if scores.len() != k {
        return Err(malformed(format!("{} fold rows, expected {k}", scores.len())));
    }
    scores.sort_by_key(|s| s.fold);
    Ok(scores)
}

/// Write the job, run `command` through `sh` with the job directory
/// appended as its final argument, and ingest the results.
pub fn external_backend_run(
    config: &RunConfig,
    plan: &FoldPlan,
    manifest: &Manifest,
    patch_dir: &Path,
    command: &str,
    job: &Path,
) -> Result<Vec<FoldScore>, HarnessError> {
    write_job(config, plan, manifest, patch_dir, job)?;
    let results = job.join(RESULTS_FILE);
    if results.exists() {
        fs::remove_file(&results).map_err(|e| io_err(&results, e))?;
    }
    let job_arg: PathBuf = fs::canonicalize(job).map_err(|e| io_err(job, e))?;
    let output = Command::new("sh")
        .arg("-c")
        .arg(format!("{command} \"$1\""))
        .arg("sh")
        .arg(&job_arg)
        .output()
        .map_err(|e| HarnessError::BackendFailed(format!("{command}: {e}")))?;
    if !output.status.success() {
        let stderr = String::from_utf8_lossy(&output.stderr);
        let last = stderr.lines().last().unwrap_or("").trim();
        return Err(HarnessError::BackendFailed(format!("{command}: {} {last}", output.status)));
    }
    if !results.exists() {
        return Err(HarnessError::BackendFailed(format!("{command}: no {RESULTS_FILE} written")));
    }
    read_results(&results, plan.k)
}
