//! Structural checks on split assignments and fold plans. Violations are
//! collected into a report rather than raised.

use std::collections::{BTreeMap, BTreeSet};

use super::apportion::WEIGHT_SCALE;
use super::split::{FoldPlan, SplitAssignment};
use super::{Manifest, Split, NUM_CLASSES};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VerificationReport {
    pub violations: Vec<String>,
}

impl VerificationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, msg: String) {
        self.violations.push(msg);
    }
}

pub enum Assignment<'a> {
    Holdout(&'a SplitAssignment),
    Folds(&'a FoldPlan),
}

pub fn verify_split(manifest: &Manifest, assignment: Assignment<'_>) -> VerificationReport {
    match assignment {
        Assignment::Holdout(a) => verify_holdout(manifest, a),
        Assignment::Folds(p) => verify_folds(manifest, p),
    }
}

/// Membership checks shared by holdout splits and individual folds:
/// overlap between parts, rows outside the manifest or ineligible, and
/// population rows left out.
fn check_parts(
    manifest: &Manifest,
    parts: [&[String]; 3],
    population: &[String],
    prefix: &str,
    report: &mut VerificationReport,
) {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for part in parts {
        for id in part {
            *seen.entry(id.as_str()).or_insert(0) += 1;
        }
    }
    for (id, n) in &seen {
        if *n > 1 {
            report.push(format!("{prefix}overlap: {id}"));
        }
        match manifest.get(id) {
            None => report.push(format!("{prefix}unknown: {id}")),
            Some(r) if !r.verdict.is_eligible() => report.push(format!("{prefix}ineligible: {id}")),
            _ => {}
        }
    }
    for id in population {
        if !seen.contains_key(id.as_str()) {
            report.push(format!("{prefix}uncovered: {id}"));
        }
    }
}

fn class_counts(manifest: &Manifest, ids: &[String]) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for id in ids {
        if let Some(r) = manifest.get(id) {
            counts[r.class.index()] += 1;
        }
    }
    counts
}

/// Per class, each part must be within `tolerance` rows of its exact quota.
fn check_stratification(
    manifest: &Manifest,
    parts: [&[String]; 3],
    fractions: [f64; 3],
    tolerance: f64,
    prefix: &str,
    report: &mut VerificationReport,
) {
    let counts: Vec<[usize; NUM_CLASSES]> = parts.iter().map(|p| class_counts(manifest, p)).collect();
    for c in 0..NUM_CLASSES {
        let n: usize = counts.iter().map(|k| k[c]).sum();
        for (j, split) in Split::PARTS.iter().enumerate() {
            let quota = n as f64 * fractions[j];
            let got = counts[j][c] as f64;
            if (got - quota).abs() > tolerance + 1e-9 {
                report.push(format!(
                    "{prefix}stratification: class {} {split} has {got} rows, expected {quota:.3} +/- {tolerance}",
                    crate::dataset::ClassLabel::ALL[c]
                ));
            }
        }
    }
}

fn largest_source_group(manifest: &Manifest, ids: &[String]) -> usize {
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for id in ids {
        if let Some(r) = manifest.get(id) {
            *sizes.entry(r.source_image.as_str()).or_insert(0) += 1;
        }
    }
    sizes.values().copied().max().unwrap_or(1)
}

pub fn verify_holdout(manifest: &Manifest, a: &SplitAssignment) -> VerificationReport {
    let mut report = VerificationReport::default();
    let parts = [a.train.as_slice(), a.validation.as_slice(), a.test.as_slice()];
    check_parts(manifest, parts, &a.population, "", &mut report);
    let r = a.ratios.as_array();
    let fractions = [r[0] / 100.0, r[1] / 100.0, r[2] / 100.0];
    // Source-level assignment can only be as fine as its largest source.
    let tolerance = if a.grouped {
        largest_source_group(manifest, &a.population) as f64
    } else {
        1.0
    };
    check_stratification(manifest, parts, fractions, tolerance, "", &mut report);
    report
}

pub fn verify_folds(manifest: &Manifest, plan: &FoldPlan) -> VerificationReport {
    let mut report = VerificationReport::default();
    if plan.folds.len() != plan.k {
        report.push(format!("fold count: {} folds for k = {}", plan.folds.len(), plan.k));
    }
    // Partition law across test sets.
    let mut tested: BTreeMap<&str, usize> = BTreeMap::new();
    for f in &plan.folds {
        for id in &f.test {
            *tested.entry(id.as_str()).or_insert(0) += 1;
        }
    }
    for (id, n) in &tested {
        if *n > 1 {
            report.push(format!("overlap: {id} in {n} test folds"));
        }
    }
    let population: BTreeSet<&str> = plan.population.iter().map(String::as_str).collect();
    for id in &plan.population {
        if !tested.contains_key(id.as_str()) {
            report.push(format!("uncovered: {id}"));
        }
    }
    for id in tested.keys() {
        if !population.contains(id) {
            report.push(format!("outside population: {id}"));
        }
    }

    let pop_counts = class_counts(manifest, &plan.population);
    let vf = (plan.validation_fraction * WEIGHT_SCALE as f64).round() / WEIGHT_SCALE as f64;
    for f in &plan.folds {
        let prefix = format!("fold {}: ", f.index);
        let parts = [f.train.as_slice(), f.validation.as_slice(), f.test.as_slice()];
        check_parts(manifest, parts, &plan.population, &prefix, &mut report);

        let test_counts = class_counts(manifest, &f.test);
        for c in 0..NUM_CLASSES {
            let quota = pop_counts[c] as f64 / plan.k as f64;
            if (test_counts[c] as f64 - quota).abs() > 1.0 + 1e-9 {
                report.push(format!(
                    "{prefix}stratification: class {} test has {} rows, expected {quota:.3} +/- 1",
                    crate::dataset::ClassLabel::ALL[c],
                    test_counts[c]
                ));
            }
        }
        let trainval = [f.train.as_slice(), f.validation.as_slice(), &[][..]];
        check_stratification(manifest, trainval, [1.0 - vf, vf, 0.0], 1.0, &prefix, &mut report);
    }
    report
}
