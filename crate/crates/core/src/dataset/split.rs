//! Seeded holdout splits and stratified k-fold plans.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::apportion::{apportion, percent_weights, WEIGHT_SCALE};
use super::{ClassLabel, DatasetError, Manifest, ManifestRow, Split, NUM_CLASSES};
use crate::rng::{derive_seed, SeededStream};

// Stream identifiers, so each stage draws from its own substream.
const STREAM_CAP: u64 = 0xCA9;
const STREAM_HOLDOUT: u64 = 0x401D;
const STREAM_FOLD_DEAL: u64 = 0xF01D;
const STREAM_FOLD_TRAINVAL: u64 = 0xF02D;

/// Train / validation / test percentages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const TRAIN_VALIDATION: SplitRatios = SplitRatios {
        train: 85.0,
        validation: 15.0,
        test: 0.0,
    };
    pub const TRAIN_VALIDATION_TEST: SplitRatios = SplitRatios {
        train: 76.5,
        validation: 13.5,
        test: 10.0,
    };

    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self, DatasetError> {
        let r = Self { train, validation, test };
        r.weights()?;
        Ok(r)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.validation, self.test]
    }

    pub fn weights(&self) -> Result<Vec<u64>, DatasetError> {
        percent_weights(&self.as_array())
            .ok_or_else(|| DatasetError::InvalidRatios("ratios must sum to 100".into()))
    }

    fn nonzero_parts(&self) -> usize {
        self.as_array().iter().filter(|&&p| p > 0.0).count()
    }
}

impl FromStr for SplitRatios {
    type Err = DatasetError;

    /// `"76.5,13.5,10"` or `"85,15"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| DatasetError::InvalidRatios(format!("cannot parse ratios {s:?}")))?;
        match parts.as_slice() {
            [t, v] => Self::new(*t, *v, 0.0),
            [t, v, te] => Self::new(*t, *v, *te),
            _ => Err(DatasetError::InvalidRatios(format!(
                "expected 2 or 3 ratios, got {}",
                parts.len()
            ))),
        }
    }
}

impl fmt::Display for SplitRatios {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.train, self.validation, self.test)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SplitOptions {
    /// Keep all patches of a source image in the same part.
    pub group_by_source: bool,
    /// Seeded subsample of at most this many eligible rows per class.
    pub per_class_cap: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    /// Rows the split had to cover (eligible rows after any per-class cap).
    pub population: Vec<String>,
    /// `per_class[c] = [train, validation, test]`.
    pub per_class: [[usize; 3]; NUM_CLASSES],
    pub ratios: SplitRatios,
    pub seed: u64,
    pub grouped: bool,
}

impl SplitAssignment {
    pub fn part(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
            Split::Unassigned => &[],
        }
    }

    /// Copy of `manifest` with the split column filled; rows outside the
    /// assignment become `unassigned`.
    pub fn apply(&self, manifest: &Manifest) -> Manifest {
        let lookup = self.lookup();
        let rows = manifest
            .rows()
            .iter()
            .map(|r| ManifestRow {
                split: lookup.get(r.patch_id.as_str()).copied().unwrap_or(Split::Unassigned),
                fold: None,
                ..r.clone()
            })
            .collect();
        Manifest::new(rows).expect("ids already unique")
    }

    fn lookup(&self) -> BTreeMap<&str, Split> {
        let mut map = BTreeMap::new();
        for split in Split::PARTS {
            for id in self.part(split) {
                map.insert(id.as_str(), split);
            }
        }
        map
    }
}

/// Eligible rows grouped by class, each group in id order and optionally
/// capped by a seeded subsample.
fn eligible_by_class(
    manifest: &Manifest,
    cap: Option<usize>,
    seed: u64,
) -> [Vec<&ManifestRow>; NUM_CLASSES] {
    let mut groups: [Vec<&ManifestRow>; NUM_CLASSES] = Default::default();
    for row in manifest.eligible() {
        groups[row.class.index()].push(row);
    }
    if let Some(cap) = cap {
        let mut rng = SeededStream::new(derive_seed(seed, &[STREAM_CAP]));
        for g in groups.iter_mut() {
            if g.len() > cap {
                rng.shuffle(g);
                g.truncate(cap);
                g.sort_by(|a, b| a.patch_id.cmp(&b.patch_id));
            }
        }
    }
    groups
}

pub fn holdout_split(
    manifest: &Manifest,
    ratios: SplitRatios,
    seed: u64,
    options: SplitOptions,
) -> Result<SplitAssignment, DatasetError> {
    let weights = ratios.weights()?;
    let groups = eligible_by_class(manifest, options.per_class_cap, seed);
    if groups.iter().all(|g| g.is_empty()) {
        return Err(DatasetError::NoEligibleRows);
    }
    let needed = ratios.nonzero_parts();
    for (c, g) in groups.iter().enumerate() {
        if !g.is_empty() && g.len() < needed {
            return Err(DatasetError::EmptyClass {
                class: ClassLabel::ALL[c],
                rows: g.len(),
                needed,
            });
        }
    }
    let sizes: Vec<usize> = groups.iter().map(|g| g.len()).collect();
    let alloc = apportion(&sizes, &weights);
    let mut rng = SeededStream::new(derive_seed(seed, &[STREAM_HOLDOUT]));
    let mut parts: [Vec<String>; 3] = Default::default();
    let mut per_class = [[0usize; 3]; NUM_CLASSES];

    for (c, group) in groups.iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        if options.group_by_source {
            let counts = assign_grouped(group, &alloc[c], &mut rng, &mut parts);
            per_class[c] = counts;
        } else {
            let mut ids: Vec<&str> = group.iter().map(|r| r.patch_id.as_str()).collect();
            rng.shuffle(&mut ids);
            let mut it = ids.into_iter();
            for (j, &n) in alloc[c].iter().enumerate() {
                parts[j].extend(it.by_ref().take(n).map(str::to_string));
                per_class[c][j] = n;
            }
        }
    }
    for p in parts.iter_mut() {
        p.sort();
    }
    let mut population: Vec<String> = groups.iter().flatten().map(|r| r.patch_id.clone()).collect();
    population.sort();
    let [train, validation, test] = parts;
    Ok(SplitAssignment {
        train,
        validation,
        test,
        population,
        per_class,
        ratios,
        seed,
        grouped: options.group_by_source,
    })
}

/// Whole source images go to one part: sources are visited in shuffled order
/// and each lands in the part furthest below its row target.
fn assign_grouped(
    group: &[&ManifestRow],
    targets: &[usize],
    rng: &mut SeededStream,
    parts: &mut [Vec<String>; 3],
) -> [usize; 3] {
    let mut by_source: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in group {
        by_source
            .entry(r.source_image.as_str())
            .or_default()
            .push(r.patch_id.as_str());
    }
    let mut sources: Vec<(&str, Vec<&str>)> = by_source.into_iter().collect();
    rng.shuffle(&mut sources);
    let mut counts = [0usize; 3];
    for (_, ids) in sources {
        let j = (0..3)
            .max_by_key(|&j| (targets[j] as i64 - counts[j] as i64, std::cmp::Reverse(j)))
            .expect("three parts");
        counts[j] += ids.len();
        parts[j].extend(ids.into_iter().map(str::to_string));
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl Fold {
    pub fn part(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
            Split::Unassigned => &[],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldPlan {
    pub k: usize,
    /// Fraction of each fold's non-test rows used for validation.
    pub validation_fraction: f64,
    pub seed: u64,
    pub folds: Vec<Fold>,
    pub population: Vec<String>,
}

/// Metadata persisted next to the per-fold CSVs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlanMeta {
    pub k: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Directory holding the patch PNGs the plan refers to.
    pub patch_dir: Option<String>,
}

pub const FOLD_PLAN_META: &str = "plan.toml";

pub fn fold_file_name(index: usize) -> String {
    format!("fold_{index}.csv")
}

impl FoldPlan {
    /// Test-fold index of every row in the population.
    pub fn test_fold_of(&self) -> BTreeMap<&str, usize> {
        self.folds
            .iter()
            .flat_map(|f| f.test.iter().map(move |id| (id.as_str(), f.index)))
            .collect()
    }

    /// Manifest view of fold `index`: split column from that fold, fold
    /// column holding each row's test-fold index.
    pub fn fold_manifest(&self, manifest: &Manifest, index: usize) -> Manifest {
        let fold = &self.folds[index];
        let test_of = self.test_fold_of();
        let mut split_of: BTreeMap<&str, Split> = BTreeMap::new();
        for split in Split::PARTS {
            for id in fold.part(split) {
                split_of.insert(id.as_str(), split);
            }
        }
        let rows = manifest
            .rows()
            .iter()
            .map(|r| ManifestRow {
                split: split_of.get(r.patch_id.as_str()).copied().unwrap_or(Split::Unassigned),
                fold: test_of.get(r.patch_id.as_str()).copied(),
                ..r.clone()
            })
            .collect();
        Manifest::new(rows).expect("ids already unique")
    }

    /// `fold_<i>.csv` for every fold plus `plan.toml`.
    pub fn write_dir(&self, manifest: &Manifest, dir: &Path, patch_dir: Option<&Path>) -> Result<(), DatasetError> {
        fs::create_dir_all(dir).map_err(|e| DatasetError::io(dir, e))?;
        for i in 0..self.k {
            self.fold_manifest(manifest, i).write(&dir.join(fold_file_name(i)))?;
        }
        let meta = FoldPlanMeta {
            k: self.k,
            validation_fraction: self.validation_fraction,
            seed: self.seed,
            patch_dir: patch_dir.map(|p| p.to_string_lossy().into_owned()),
        };
        let text = toml::to_string(&meta).map_err(|e| DatasetError::Malformed(e.to_string()))?;
        let path = dir.join(FOLD_PLAN_META);
        fs::write(&path, text).map_err(|e| DatasetError::io(&path, e))
    }

    /// Inverse of [`FoldPlan::write_dir`]: the plan and the fold-0 manifest
    /// (identical to the others apart from the split column).
    pub fn read_dir(dir: &Path) -> Result<(FoldPlan, FoldPlanMeta, Vec<Manifest>), DatasetError> {
        let meta_path = dir.join(FOLD_PLAN_META);
        let text = fs::read_to_string(&meta_path).map_err(|e| DatasetError::io(&meta_path, e))?;
        let meta: FoldPlanMeta = toml::from_str(&text).map_err(|e| DatasetError::Malformed(e.to_string()))?;
        let mut folds = Vec::with_capacity(meta.k);
        let mut manifests = Vec::with_capacity(meta.k);
        let mut population = Vec::new();
        for i in 0..meta.k {
            let m = Manifest::read(&dir.join(fold_file_name(i)))?;
            let pick = |s: Split| -> Vec<String> {
                m.rows().iter().filter(|r| r.split == s).map(|r| r.patch_id.clone()).collect()
            };
            if i == 0 {
                population = m.rows().iter().filter(|r| r.fold.is_some()).map(|r| r.patch_id.clone()).collect();
            }
            folds.push(Fold {
                index: i,
                train: pick(Split::Train),
                validation: pick(Split::Validation),
                test: pick(Split::Test),
            });
            manifests.push(m);
        }
        let plan = FoldPlan {
            k: meta.k,
            validation_fraction: meta.validation_fraction,
            seed: meta.seed,
            folds,
            population,
        };
        Ok((plan, meta, manifests))
    }
}

/// Stratified shuffled k-fold: per class, shuffle then deal round-robin into
/// `k` test buckets (the dealing position carries over between classes so
/// bucket sizes stay balanced). Each fold's remaining rows are split into
/// train / validation by `validation_fraction`.
pub fn kfold_plan(
    manifest: &Manifest,
    k: usize,
    validation_fraction: f64,
    seed: u64,
    per_class_cap: Option<usize>,
) -> Result<FoldPlan, DatasetError> {
    if k < 2 {
        return Err(DatasetError::InvalidRatios(format!("k must be at least 2, got {k}")));
    }
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(DatasetError::InvalidRatios(format!(
            "validation fraction must be in [0, 1), got {validation_fraction}"
        )));
    }
    let groups = eligible_by_class(manifest, per_class_cap, seed);
    if groups.iter().all(|g| g.is_empty()) {
        return Err(DatasetError::NoEligibleRows);
    }
    for (c, g) in groups.iter().enumerate() {
        if !g.is_empty() && g.len() < k {
            return Err(DatasetError::ClassSmallerThanK {
                class: ClassLabel::ALL[c],
                rows: g.len(),
                k,
            });
        }
    }

    let mut deal_rng = SeededStream::new(derive_seed(seed, &[STREAM_FOLD_DEAL]));
    // buckets[fold][class] -> ids
    let mut buckets: Vec<[Vec<&str>; NUM_CLASSES]> = (0..k).map(|_| Default::default()).collect();
    let mut position = 0usize;
    for (c, group) in groups.iter().enumerate() {
        let mut ids: Vec<&str> = group.iter().map(|r| r.patch_id.as_str()).collect();
        deal_rng.shuffle(&mut ids);
        for id in ids {
            buckets[position % k][c].push(id);
            position += 1;
        }
    }

    let val_w = (validation_fraction * WEIGHT_SCALE as f64).round() as u64;
    let weights = [WEIGHT_SCALE - val_w, val_w];
    let mut folds = Vec::with_capacity(k);
    for i in 0..k {
        let mut trainval: [Vec<&str>; NUM_CLASSES] = Default::default();
        for (c, group) in groups.iter().enumerate() {
            let mut ids: Vec<&str> = group
                .iter()
                .map(|r| r.patch_id.as_str())
                .filter(|id| !buckets[i][c].contains(id))
                .collect();
            let mut rng = SeededStream::substream(seed, &[STREAM_FOLD_TRAINVAL, i as u64, c as u64]);
            rng.shuffle(&mut ids);
            trainval[c] = ids;
        }
        let sizes: Vec<usize> = trainval.iter().map(|v| v.len()).collect();
        let alloc = apportion(&sizes, &weights);
        let mut train = Vec::new();
        let mut validation = Vec::new();
        for (c, ids) in trainval.iter().enumerate() {
            let n_train = alloc[c][0];
            train.extend(ids[..n_train].iter().map(|s| s.to_string()));
            validation.extend(ids[n_train..].iter().map(|s| s.to_string()));
        }
        let mut test: Vec<String> = buckets[i].iter().flatten().map(|s| s.to_string()).collect();
        train.sort();
        validation.sort();
        test.sort();
        folds.push(Fold {
            index: i,
            train,
            validation,
            test,
        });
    }
    let mut population: Vec<String> = groups.iter().flatten().map(|r| r.patch_id.clone()).collect();
    population.sort();
    Ok(FoldPlan {
        k,
        validation_fraction,
        seed,
        folds,
        population,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Verdict;

    pub(crate) fn balanced_manifest(per_class: usize) -> Manifest {
        let mut rows = Vec::new();
        for class in ClassLabel::ALL {
            for i in 0..per_class {
                let src = format!("{}_{:03}.jpg", class.code(), i / 4);
                rows.push(ManifestRow::new(
                    format!("{}_{:03}_r{}_c0", class.code(), i / 4, i % 4),
                    src,
                    class,
                ));
            }
        }
        Manifest::new(rows).unwrap()
    }

    #[test]
    fn ratios_parse_and_validate() {
        let r: SplitRatios = "76.5,13.5,10".parse().unwrap();
        assert_eq!(r, SplitRatios::TRAIN_VALIDATION_TEST);
        let r: SplitRatios = "85,15".parse().unwrap();
        assert_eq!(r, SplitRatios::TRAIN_VALIDATION);
        let err = "76.5,13.5,9".parse::<SplitRatios>().unwrap_err();
        assert!(err.to_string().contains("ratios must sum to 100"));
        assert!("a,b".parse::<SplitRatios>().is_err());
    }

    #[test]
    fn single_class_85_15() {
        let rows = (0..100)
            .map(|i| ManifestRow::new(format!("s_r{i}_c0"), "s.jpg", ClassLabel::Tsh))
            .collect();
        let m = Manifest::new(rows).unwrap();
        let a = holdout_split(&m, SplitRatios::TRAIN_VALIDATION, 1, SplitOptions::default()).unwrap();
        assert_eq!((a.train.len(), a.validation.len(), a.test.len()), (85, 15, 0));
    }

    #[test]
    fn reference_sized_holdout() {
        let m = balanced_manifest(500);
        let a = holdout_split(&m, SplitRatios::TRAIN_VALIDATION_TEST, 9, SplitOptions::default()).unwrap();
        assert_eq!(a.test.len(), 250);
        assert_eq!(a.train.len() + a.validation.len(), 2250);
        assert_eq!((a.train.len(), a.validation.len()), (1913, 337));
        for c in a.per_class {
            assert_eq!(c[2], 50);
        }
    }

    #[test]
    fn holdout_is_deterministic_and_seed_sensitive() {
        let m = balanced_manifest(40);
        let r = SplitRatios::TRAIN_VALIDATION_TEST;
        let a = holdout_split(&m, r, 5, SplitOptions::default()).unwrap();
        let b = holdout_split(&m, r, 5, SplitOptions::default()).unwrap();
        let c = holdout_split(&m, r, 6, SplitOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.apply(&m).to_csv_string(), b.apply(&m).to_csv_string());
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn rejected_rows_are_never_assigned() {
        let mut rows: Vec<ManifestRow> = balanced_manifest(20).rows().to_vec();
        for (i, r) in rows.iter_mut().enumerate() {
            r.verdict = match i % 4 {
                0 => Verdict::RejectDark,
                1 => Verdict::ManualReject,
                2 => Verdict::ManualKeep,
                _ => Verdict::Keep,
            };
        }
        let m = Manifest::new(rows).unwrap();
        let a = holdout_split(&m, SplitRatios::TRAIN_VALIDATION_TEST, 3, SplitOptions::default()).unwrap();
        let applied = a.apply(&m);
        for r in applied.rows() {
            assert_eq!(r.split != Split::Unassigned, r.verdict.is_eligible());
        }
        let plan = kfold_plan(&m, 5, 0.15, 3, None).unwrap();
        for f in &plan.folds {
            for id in f.train.iter().chain(&f.validation).chain(&f.test) {
                assert!(m.get(id).unwrap().verdict.is_eligible());
            }
        }
    }

    #[test]
    fn tiny_class_is_an_error() {
        let rows = vec![
            ManifestRow::new("a_r0_c0", "a.jpg", ClassLabel::Tsh),
            ManifestRow::new("a_r0_c1", "a.jpg", ClassLabel::Tsh),
        ];
        let m = Manifest::new(rows).unwrap();
        assert!(matches!(
            holdout_split(&m, SplitRatios::TRAIN_VALIDATION_TEST, 0, SplitOptions::default()),
            Err(DatasetError::EmptyClass { rows: 2, needed: 3, .. })
        ));
        assert!(matches!(
            kfold_plan(&m, 10, 0.15, 0, None),
            Err(DatasetError::ClassSmallerThanK { rows: 2, k: 10, .. })
        ));
        assert!(matches!(
            holdout_split(&Manifest::default(), SplitRatios::TRAIN_VALIDATION, 0, SplitOptions::default()),
            Err(DatasetError::NoEligibleRows)
        ));
    }

    #[test]
    fn per_class_cap_subsamples() {
        let m = balanced_manifest(60);
        let opts = SplitOptions {
            per_class_cap: Some(50),
            ..Default::default()
        };
        let a = holdout_split(&m, SplitRatios::TRAIN_VALIDATION_TEST, 2, opts).unwrap();
        assert_eq!(a.population.len(), 250);
        assert_eq!(a.test.len(), 25);
    }

    #[test]
    fn grouped_split_keeps_sources_together() {
        let m = balanced_manifest(80);
        let opts = SplitOptions {
            group_by_source: true,
            ..Default::default()
        };
        let a = holdout_split(&m, SplitRatios::TRAIN_VALIDATION_TEST, 4, opts).unwrap();
        let applied = a.apply(&m);
        let mut part_of: BTreeMap<&str, Split> = BTreeMap::new();
        for r in applied.rows() {
            let prev = part_of.insert(r.source_image.as_str(), r.split);
            assert!(prev.is_none() || prev == Some(r.split));
        }
        assert_eq!(a.train.len() + a.validation.len() + a.test.len(), 400);
    }

    #[test]
    fn fifty_per_class_ten_folds() {
        let m = balanced_manifest(50);
        let plan = kfold_plan(&m, 10, 0.15, 17, None).unwrap();
        for f in &plan.folds {
            for class in ClassLabel::ALL {
                let n = f.test.iter().filter(|id| m.get(id).unwrap().class == class).count();
                assert_eq!(n, 5);
            }
        }
    }

    #[test]
    fn reference_sized_folds() {
        let m = balanced_manifest(500);
        let plan = kfold_plan(&m, 10, 0.15, 1, None).unwrap();
        for f in &plan.folds {
            assert_eq!(f.test.len(), 250);
            assert!(f.train.len() == 1912 || f.train.len() == 1913, "{}", f.train.len());
            assert!(f.validation.len() == 337 || f.validation.len() == 338);
            assert_eq!(f.train.len() + f.validation.len(), 2250);
        }
    }

    #[test]
    fn fold_dir_round_trip() {
        let m = balanced_manifest(20);
        let plan = kfold_plan(&m, 4, 0.15, 8, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        plan.write_dir(&m, dir.path(), Some(Path::new("/data/patches"))).unwrap();
        let (back, meta, manifests) = FoldPlan::read_dir(dir.path()).unwrap();
        assert_eq!(back, plan);
        assert_eq!(meta.patch_dir.as_deref(), Some("/data/patches"));
        assert_eq!(manifests.len(), 4);
        let f0 = fs::read_to_string(dir.path().join("fold_0.csv")).unwrap();
        assert!(f0.starts_with("patch_id,source_image,class,verdict,split,fold\n"));
        assert!(f0.ends_with('\n'));
    }
}
