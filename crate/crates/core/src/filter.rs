//! Automatic rejection of lens-contour and blank patches, with an ambiguity
//! band routed to human review.
//!
//! Decisions are taken in a fixed order on per-patch luminance statistics:
//!
//! 1. `RejectDark` if `mean < dark_mean` or `p95 < dark_p95`
//! 2. `RejectBlank` if `michelson < blank_contrast`
//! 3. `NeedsReview` if `michelson < blank_contrast + review_band`
//! 4. `Keep` otherwise
//!
//! Dark comes first because black regions also have near-zero contrast.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Manifest;
pub use crate::dataset::Verdict;
use crate::imaging::{self, ImageBuffer, ImagingError, RegionStats};

pub const FILTER_REPORT_HEADER: &str = "patch_id,verdict,mean,p05,p95,michelson";

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("missing patch file {0}")]
    MissingPatchFile(PathBuf),
    #[error("{0}")]
    Imaging(#[from] ImagingError),
    #[error("io: {0}")]
    Io(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("need at least 2 keep and 2 reject labels, got {keep} keep / {reject} reject")]
    InsufficientLabels { keep: usize, reject: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterThresholds {
    pub dark_mean: f64,
    pub dark_p95: f64,
    pub blank_contrast: f64,
    pub review_band: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            dark_mean: 0.12,
            dark_p95: 0.20,
            blank_contrast: 0.06,
            review_band: 0.04,
        }
    }
}

impl FilterThresholds {
    pub fn validate(&self) -> Result<(), FilterError> {
        let fields = [
            ("dark_mean", self.dark_mean),
            ("dark_p95", self.dark_p95),
            ("blank_contrast", self.blank_contrast),
            ("review_band", self.review_band),
        ];
        for (name, v) in fields {
            if !(0.0..=1.0).contains(&v) {
                return Err(FilterError::InvalidThresholds(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.review_band >= self.dark_mean {
            return Err(FilterError::InvalidThresholds(
                "review_band must be below dark_mean".into(),
            ));
        }
        if self.blank_contrast >= self.dark_p95 {
            return Err(FilterError::InvalidThresholds(
                "blank_contrast must be below dark_p95".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchVerdict {
    pub verdict: Verdict,
    pub stats: RegionStats,
}

/// Automatic verdict for a set of statistics. Never returns a manual verdict.
pub fn classify_stats(stats: &RegionStats, t: &FilterThresholds) -> Verdict {
    if stats.mean < t.dark_mean || stats.p95 < t.dark_p95 {
        Verdict::RejectDark
    } else if stats.michelson < t.blank_contrast {
        Verdict::RejectBlank
    } else if stats.michelson < t.blank_contrast + t.review_band {
        Verdict::NeedsReview
    } else {
        Verdict::Keep
    }
}

pub fn patch_stats(patch: &ImageBuffer) -> RegionStats {
    let plane = imaging::to_luminance(patch);
    RegionStats::from_samples(plane.data())
}

pub fn classify_patch(patch: &ImageBuffer, t: &FilterThresholds) -> PatchVerdict {
    let stats = patch_stats(patch);
    PatchVerdict {
        verdict: classify_stats(&stats, t),
        stats,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterReportRow {
    pub patch_id: String,
    pub verdict: Verdict,
    pub mean: f64,
    pub p05: f64,
    pub p95: f64,
    pub michelson: f64,
}

impl FilterReportRow {
    pub fn stats(&self) -> (f64, f64, f64, f64) {
        (self.mean, self.p05, self.p95, self.michelson)
    }
}

/// Rows in patch id order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterReport {
    pub rows: Vec<FilterReportRow>,
}

impl FilterReport {
    pub fn counts(&self) -> BTreeMap<Verdict, usize> {
        let mut counts: BTreeMap<Verdict, usize> = Verdict::ALL.iter().map(|&v| (v, 0)).collect();
        for r in &self.rows {
            *counts.entry(r.verdict).or_insert(0) += 1;
        }
        counts
    }

    pub fn verdict_of(&self, patch_id: &str) -> Option<Verdict> {
        self.rows
            .binary_search_by(|r| r.patch_id.as_str().cmp(patch_id))
            .ok()
            .map(|i| self.rows[i].verdict)
    }

    pub fn write_to(&self, writer: impl Write) -> Result<(), FilterError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(FILTER_REPORT_HEADER.split(','))?;
        for r in &self.rows {
            wtr.write_record([
                r.patch_id.clone(),
                r.verdict.to_string(),
                format!("{:.6}", r.mean),
                format!("{:.6}", r.p05),
                format!("{:.6}", r.p95),
                format!("{:.6}", r.michelson),
            ])?;
        }
        wtr.flush().map_err(|e| FilterError::Io(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory csv write");
        String::from_utf8(buf).expect("utf-8")
    }

    pub fn from_reader(reader: impl Read) -> Result<Self, FilterError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut rows: Vec<FilterReportRow> = rdr.deserialize().collect::<Result<_, _>>()?;
        rows.sort_by(|a, b| a.patch_id.cmp(&b.patch_id));
        Ok(Self { rows })
    }

    pub fn read(path: &Path) -> Result<Self, FilterError> {
        let file = fs::File::open(path).map_err(|e| FilterError::Io(format!("{}: {e}", path.display())))?;
        Self::from_reader(file)
    }

    pub fn write(&self, path: &Path) -> Result<(), FilterError> {
        let file = fs::File::create(path).map_err(|e| FilterError::Io(format!("{}: {e}", path.display())))?;
        self.write_to(file)
    }
}

/// Where the filter report for `manifest` lives: `<stem>.filter.csv` next
/// to it.
pub fn report_path_for(manifest: &Path) -> PathBuf {
    let stem = manifest.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    manifest.with_file_name(format!("{stem}.filter.csv"))
}

pub fn patch_path(patch_dir: &Path, patch_id: &str) -> PathBuf {
    patch_dir.join(format!("{patch_id}.png"))
}

pub fn load_patch(patch_dir: &Path, patch_id: &str) -> Result<ImageBuffer, FilterError> {
    let path = patch_path(patch_dir, patch_id);
    let bytes = fs::read(&path).map_err(|_| FilterError::MissingPatchFile(path.clone()))?;
    Ok(imaging::decode_image(&bytes)?)
}

/// Classify every manifest row from its PNG in `patch_dir`. Manual verdicts
/// are kept as they are; the report still carries their statistics.
pub fn filter_run(
    manifest: &mut Manifest,
    patch_dir: &Path,
    t: &FilterThresholds,
) -> Result<FilterReport, FilterError> {
    t.validate()?;
    let stats: Vec<RegionStats> = manifest
        .rows()
        .par_iter()
        .map(|row| load_patch(patch_dir, &row.patch_id).map(|img| patch_stats(&img)))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(stats.len());
    let ids: Vec<String> = manifest.rows().iter().map(|r| r.patch_id.clone()).collect();
    for (id, s) in ids.iter().zip(stats) {
        let row = manifest.get_mut(id).expect("id from manifest");
        if !row.verdict.is_manual() {
            row.verdict = classify_stats(&s, t);
        }
        rows.push(FilterReportRow {
            patch_id: id.clone(),
            verdict: row.verdict,
            mean: s.mean,
            p05: s.p05,
            p95: s.p95,
            michelson: s.michelson,
        });
    }
    Ok(FilterReport { rows })
}

/// Counts of automatic Keep against human keep labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub true_keep: usize,
    pub false_keep: usize,
    pub false_reject: usize,
    pub true_reject: usize,
}

impl Confusion {
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.true_keep + self.false_keep + self.false_reject;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.true_keep as f64 / denom as f64
        }
    }
}

pub fn confusion(labeled: &[(RegionStats, bool)], t: &FilterThresholds) -> Confusion {
    let mut c = Confusion::default();
    for (stats, human_keep) in labeled {
        let auto_keep = classify_stats(stats, t) == Verdict::Keep;
        match (auto_keep, *human_keep) {
            (true, true) => c.true_keep += 1,
            (true, false) => c.false_keep += 1,
            (false, true) => c.false_reject += 1,
            (false, false) => c.true_reject += 1,
        }
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub thresholds: FilterThresholds,
    pub confusion: Confusion,
    pub f1: f64,
}

const GRID: usize = 100;

/// Smallest grid step `k` with `value < k / 100` (101 if none).
fn first_step_above(value: f64) -> usize {
    (0..=GRID).find(|&k| value < k as f64 / GRID as f64).unwrap_or(GRID + 1)
}

/// Largest grid step `k` with `k / 100 <= value` (None if none).
fn last_step_at_or_below(value: f64) -> Option<usize> {
    (0..=GRID).rev().find(|&k| k as f64 / GRID as f64 <= value)
}

/// Split a keep cut `s` (in grid steps) into blank contrast and review band
/// satisfying `band < dark_mean` and `blank < dark_p95`, preferring a band
/// close to the default.
fn split_keep_cut(s: usize, dm: usize, dp: usize) -> Option<(usize, usize)> {
    let lo = (s + 1).saturating_sub(dp);
    let hi = s.min(dm.checked_sub(1)?);
    if lo > hi {
        return None;
    }
    let default_band = (FilterThresholds::default().review_band * GRID as f64).round() as usize;
    let band = default_band.clamp(lo, hi);
    Some((s - band, band))
}

fn steps(k: usize) -> f64 {
    k as f64 / GRID as f64
}

/// Grid search (step 0.01 per field) maximizing F1 of automatic Keep against
/// the human labels. Keep only depends on the dark thresholds and on
/// `blank_contrast + review_band`, so the search runs over that sum and
/// splits it afterwards. Ties go to fewer false rejections, then the
/// smallest total threshold.
pub fn calibrate_from_stats(labeled: &[(RegionStats, bool)]) -> Result<Calibration, FilterError> {
    let keep = labeled.iter().filter(|(_, k)| *k).count();
    let reject = labeled.len() - keep;
    if keep < 2 || reject < 2 {
        return Err(FilterError::InsufficientLabels { keep, reject });
    }
    // Integer cut points per sample.
    struct Cuts {
        dark_mean_from: usize,
        dark_p95_from: usize,
        keep_up_to: Option<usize>,
        human_keep: bool,
    }
    let cuts: Vec<Cuts> = labeled
        .iter()
        .map(|(s, k)| Cuts {
            dark_mean_from: first_step_above(s.mean),
            dark_p95_from: first_step_above(s.p95),
            keep_up_to: last_step_at_or_below(s.michelson),
            human_keep: *k,
        })
        .collect();

    // (f1 numerator, f1 denominator, false rejects, threshold sum, dm, dp, s)
    let mut best: Option<(usize, usize, usize, usize, usize, usize, usize)> = None;
    for dm in 1..=GRID {
        for dp in 1..=GRID {
            for s in 0..=GRID {
                if split_keep_cut(s, dm, dp).is_none() {
                    continue;
                }
                let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
                for c in &cuts {
                    let dark = dm >= c.dark_mean_from || dp >= c.dark_p95_from;
                    let auto_keep = !dark && c.keep_up_to.is_some_and(|m| s <= m);
                    match (auto_keep, c.human_keep) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fneg += 1,
                        _ => {}
                    }
                }
                let cand = (2 * tp, 2 * tp + fp + fneg, fneg, dm + dp + s, dm, dp, s);
                let better = match best {
                    None => true,
                    Some(b) => {
                        // Compare F1 fractions exactly, then tie-breakers.
                        let lhs = cand.0 * b.1;
                        let rhs = b.0 * cand.1;
                        lhs > rhs || (lhs == rhs && (cand.2, cand.3, cand.4, cand.5, cand.6) < (b.2, b.3, b.4, b.5, b.6))
                    }
                };
                if better {
                    best = Some(cand);
                }
            }
        }
    }
    let (_, _, _, _, dm, dp, s) = best.expect("grid is non-empty");
    let (blank, band) = split_keep_cut(s, dm, dp).expect("feasible by construction");
    let thresholds = FilterThresholds {
        dark_mean: steps(dm),
        dark_p95: steps(dp),
        blank_contrast: steps(blank),
        review_band: steps(band),
    };
    let confusion = confusion(labeled, &thresholds);
    Ok(Calibration {
        thresholds,
        confusion,
        f1: confusion.f1(),
    })
}

pub fn calibrate_thresholds(labeled: &[(ImageBuffer, bool)]) -> Result<Calibration, FilterError> {
    let stats: Vec<(RegionStats, bool)> = labeled.iter().map(|(p, k)| (patch_stats(p), *k)).collect();
    calibrate_from_stats(&stats)
}
