use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{fold_stats, FoldResult, MetricsError, RunSummary};
use crate::harness::TrainRecord;

pub const FOLDS_HEADER: &str = "fold,loss,accuracy";
pub const SUMMARY_HEADER: &str = "statistic,value";
pub const CURVES_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc,best";
/// Suffix of per-run fold files: `<model>.<mode>.folds.csv`.
pub const FOLDS_SUFFIX: &str = ".folds.csv";

/// Fold results of one (model, mode) run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub model: String,
    pub mode: String,
    pub results: Vec<FoldResult>,
    /// Footnote printed under the table.
    pub note: Option<String>,
}

impl RunReport {
    pub fn new(model: impl Into<String>, mode: impl Into<String>, results: Vec<FoldResult>) -> Self {
        Self {
            model: model.into(),
            mode: mode.into(),
            results,
            note: None,
        }
    }

    pub fn summary(&self) -> Result<RunSummary, MetricsError> {
        fold_stats(&self.results)
    }

    fn slug(&self) -> String {
        let clean = |s: &str| -> String {
            s.chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
                .collect()
        };
        format!("{}.{}", clean(&self.model), clean(&self.mode))
    }

    /// One-line summary, e.g. `VGG16 transfer: mean 85.040%, std 1.861%, loss 0.595`.
    pub fn summary_line(&self) -> Result<String, MetricsError> {
        let s = self.summary()?;
        Ok(format!(
            "{} {}: mean {:.3}%, std {:.3}%, loss {:.3}",
            self.model, self.mode, s.average_accuracy, s.std_accuracy, s.average_loss
        ))
    }

    pub fn folds_csv(&self) -> String {
        let mut out = format!("{FOLDS_HEADER}\n");
        for r in &self.results {
            let _ = writeln!(out, "{},{},{}", r.fold, r.loss, r.accuracy);
        }
        out
    }

    pub fn summary_csv(&self) -> Result<String, MetricsError> {
        let s = self.summary()?;
        Ok(format!(
            "{SUMMARY_HEADER}\naverage_loss,{:.6}\naverage_accuracy,{:.6}\nstd_accuracy,{:.6}\n",
            s.average_loss, s.average_accuracy, s.std_accuracy
        ))
    }

    pub fn markdown(&self) -> Result<String, MetricsError> {
        let s = self.summary()?;
        let mut out = format!("## {} ({})\n\n| Fold | Loss | Accuracy |\n|---:|---:|---:|\n", self.model, self.mode);
        for r in &self.results {
            let _ = writeln!(out, "| {} | {:.3} | {:.3}% |", r.fold, r.loss, r.accuracy);
        }
        let _ = writeln!(out, "| Average Loss | {:.3} | |", s.average_loss);
        let _ = writeln!(out, "| Average Accuracy | | {:.3}% |", s.average_accuracy);
        let _ = writeln!(out, "| Standard Deviation | | {:.3}% |", s.std_accuracy);
        if let Some(note) = &self.note {
            let _ = write!(out, "\n\\* {note}\n");
        }
        Ok(out)
    }
}

/// Parse a `fold,loss,accuracy` file (accuracy in percent).
pub fn read_folds_csv(path: &Path) -> Result<Vec<FoldResult>, MetricsError> {
    let io = |e: &dyn std::fmt::Display| MetricsError::Io(format!("{}: {e}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| io(&e))?;
    let header: Vec<String> = reader.headers().map_err(|e| io(&e))?.iter().map(str::to_string).collect();
    if header.join(",") != FOLDS_HEADER {
        return Err(MetricsError::InvalidResult(format!("{}: header must be {FOLDS_HEADER}", path.display())));
    }
    let mut out = Vec::new();
    for row in reader.deserialize::<FoldResult>() {
        let r = row.map_err(|e| MetricsError::InvalidResult(format!("{}: {e}", path.display())))?;
        out.push(FoldResult::new(r.fold, r.loss, r.accuracy)?);
    }
    Ok(out)
}

/// Every `<model>.<mode>.folds.csv` in `dir`, sorted by file name.
pub fn read_results_dir(dir: &Path) -> Result<Vec<RunReport>, MetricsError> {
    let entries = fs::read_dir(dir).map_err(|e| MetricsError::Io(format!("{}: {e}", dir.display())))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(FOLDS_SUFFIX))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let stem = &name[..name.len() - FOLDS_SUFFIX.len()];
            let (model, mode) = stem.split_once('.').unwrap_or((stem, "run"));
            Ok(RunReport::new(model, mode, read_folds_csv(&dir.join(&name))?))
        })
        .collect()
}

pub fn write_folds_csv(report: &RunReport, dir: &Path) -> Result<PathBuf, MetricsError> {
    let path = dir.join(format!("{}{FOLDS_SUFFIX}", report.slug()));
    write(&path, &report.folds_csv())?;
    Ok(path)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportFiles {
    pub tables: Vec<PathBuf>,
    pub comparison: Option<PathBuf>,
}

fn write(path: &Path, text: &str) -> Result<(), MetricsError> {
    fs::write(path, text).map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))
}

/// Per run: `<slug>.md`, `<slug>.summary.csv`, plus `<slug>.folds.csv`
/// unless it already exists; then one `comparison.md` over all runs.
/// An empty list writes nothing.
pub fn render_report(reports: &[RunReport], dir: &Path) -> Result<ReportFiles, MetricsError> {
    let mut files = ReportFiles::default();
    if reports.is_empty() {
        return Ok(files);
    }
    fs::create_dir_all(dir).map_err(|e| MetricsError::Io(format!("{}: {e}", dir.display())))?;
    let mut comparison = String::from(
        "| Model | Mode | Average Loss | Average Accuracy | Standard Deviation |\n|---|---|---:|---:|---:|\n",
    );
    let mut notes = Vec::new();
    for r in reports {
        let s = r.summary()?;
        let md = dir.join(format!("{}.md", r.slug()));
        write(&md, &r.markdown()?)?;
        write(&dir.join(format!("{}.summary.csv", r.slug())), &r.summary_csv()?)?;
        let folds = dir.join(format!("{}{FOLDS_SUFFIX}", r.slug()));
        if !folds.exists() {
            write(&folds, &r.folds_csv())?;
        }
        files.tables.push(md);
        let marker = if r.note.is_some() {
            notes.push(format!("{} {}: {}", r.model, r.mode, r.note.as_deref().unwrap_or("")));
            "\\*"
        } else {
            ""
        };
        let _ = writeln!(
            comparison,
            "| {}{marker} | {} | {:.3} | {:.3}% | {:.3}% |",
            r.model, r.mode, s.average_loss, s.average_accuracy, s.std_accuracy
        );
    }
    for n in notes {
        let _ = write!(comparison, "\n\\* {n}\n");
    }
    let path = dir.join("comparison.md");
    write(&path, &comparison)?;
    files.comparison = Some(path);
    Ok(files)
}

/// One row per epoch; `best` is 1 on the lowest-validation-loss epoch.
pub fn export_curves(record: &TrainRecord) -> Result<String, MetricsError> {
    let best = record.best_epoch().ok_or(MetricsError::EmptyResults)?;
    let mut out = format!("{CURVES_HEADER}\n");
    for e in &record.epochs {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{}",
            e.epoch,
            e.train_loss,
            e.train_accuracy,
            e.validation_loss,
            e.validation_accuracy,
            u8::from(e.epoch == best)
        );
    }
    Ok(out)
}

pub fn write_curves(record: &TrainRecord, path: &Path) -> Result<(), MetricsError> {
    write(path, &export_curves(record)?)
}
