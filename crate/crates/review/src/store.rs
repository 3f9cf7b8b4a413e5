//! Manifest plus write-ahead log. Every manual verdict is appended to
//! `<manifest>.wal` and fsynced before it is acknowledged; the manifest file
//! itself is rewritten on open (after replay) and on clean shutdown.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use forge_core::filter::{load_patch, patch_stats, report_path_for, FilterReport};
use forge_core::{Manifest, Verdict};
use serde::Serialize;

use crate::ReviewError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Keep,
    Reject,
}

impl Decision {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "keep" => Some(Self::Keep),
            "reject" => Some(Self::Reject),
            _ => None,
        }
    }

    pub fn verdict(self) -> Verdict {
        match self {
            Self::Keep => Verdict::ManualKeep,
            Self::Reject => Verdict::ManualReject,
        }
    }
}

#[derive(Debug, PartialEq, Eq)]
pub enum Applied {
    Recorded,
    /// Same verdict already present; nothing written.
    Unchanged,
}

#[derive(Debug, PartialEq, Eq)]
pub enum Refused {
    UnknownId,
    /// The row is not awaiting review (automatic verdict or a different
    /// manual verdict).
    NotPending(Verdict),
}

/// Luminance statistics shown next to a pending patch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PatchStats {
    pub mean: f64,
    pub p05: f64,
    pub p95: f64,
    pub michelson: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueueItem {
    pub patch_id: String,
    pub class: String,
    pub stats: Option<PatchStats>,
    pub verdict: Verdict,
    pub image_url: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Progress {
    pub pending: usize,
    pub decided: usize,
    pub total: usize,
}

pub struct ReviewStore {
    manifest: Manifest,
    manifest_path: PathBuf,
    patch_dir: PathBuf,
    wal: File,
    wal_path: PathBuf,
    stats: BTreeMap<String, PatchStats>,
}

pub fn wal_path_for(manifest: &Path) -> PathBuf {
    let mut name = manifest.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".wal");
    manifest.with_file_name(name)
}

fn io(path: &Path, e: std::io::Error) -> ReviewError {
    ReviewError::Io(format!("{}: {e}", path.display()))
}

/// Apply logged verdicts; an unparsable final line (torn write) is ignored.
fn replay(manifest: &mut Manifest, text: &str) -> usize {
    let mut applied = 0;
    for line in text.lines() {
        let Some((id, verdict)) = line.split_once(',') else { continue };
        let Ok(verdict) = verdict.trim().parse::<Verdict>() else { continue };
        if !verdict.is_manual() {
            continue;
        }
        if let Some(row) = manifest.get_mut(id) {
            if row.verdict == Verdict::NeedsReview {
                row.verdict = verdict;
                applied += 1;
            }
        }
    }
    applied
}

impl ReviewStore {
    pub fn open(manifest_path: &Path, patch_dir: &Path) -> Result<Self, ReviewError> {
        if !patch_dir.is_dir() {
            return Err(ReviewError::MissingPatchDir(patch_dir.to_path_buf()));
        }
        let mut manifest = Manifest::read(manifest_path)?;
        let wal_path = wal_path_for(manifest_path);
        if let Ok(text) = fs::read_to_string(&wal_path) {
            if replay(&mut manifest, &text) > 0 {
                manifest.write(manifest_path)?;
            }
        }
        let wal = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&wal_path)
            .map_err(|e| io(&wal_path, e))?;
        wal.sync_all().map_err(|e| io(&wal_path, e))?;

        let report = FilterReport::read(&report_path_for(manifest_path)).ok();
        let mut stats = BTreeMap::new();
        for row in manifest.rows().iter().filter(|r| r.verdict == Verdict::NeedsReview || r.verdict.is_manual()) {
            let from_report = report.as_ref().and_then(|r| r.rows.iter().find(|x| x.patch_id == row.patch_id));
            let s = match from_report {
                Some(x) => Some(PatchStats {
                    mean: x.mean,
                    p05: x.p05,
                    p95: x.p95,
                    michelson: x.michelson,
                }),
                None => load_patch(patch_dir, &row.patch_id).ok().map(|img| {
                    let s = patch_stats(&img);
                    PatchStats {
                        mean: s.mean,
                        p05: s.p05,
                        p95: s.p95,
                        michelson: s.michelson,
                    }
                }),
            };
            if let Some(s) = s {
                stats.insert(row.patch_id.clone(), s);
            }
        }
        Ok(Self {
            manifest,
            manifest_path: manifest_path.to_path_buf(),
            patch_dir: patch_dir.to_path_buf(),
            wal,
            wal_path,
            stats,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn patch_dir(&self) -> &Path {
        &self.patch_dir
    }

    /// Pending items in patch-id order.
    pub fn queue(&self, offset: usize, limit: usize) -> Vec<QueueItem> {
        self.manifest
            .rows()
            .iter()
            .filter(|r| r.verdict == Verdict::NeedsReview)
            .skip(offset)
            .take(limit)
            .map(|r| QueueItem {
                patch_id: r.patch_id.clone(),
                class: r.class.code().to_string(),
                stats: self.stats.get(&r.patch_id).copied(),
                verdict: r.verdict,
                image_url: format!("/api/patch/{}.png", r.patch_id),
            })
            .collect()
    }

    pub fn progress(&self) -> Progress {
        let pending = self.manifest.rows().iter().filter(|r| r.verdict == Verdict::NeedsReview).count();
        let decided = self.manifest.rows().iter().filter(|r| r.verdict.is_manual()).count();
        Progress {
            pending,
            decided,
            total: pending + decided,
        }
    }

    /// Record a decision; durable on `Ok(Applied::Recorded)`.
    pub fn decide(&mut self, patch_id: &str, decision: Decision) -> Result<Result<Applied, Refused>, ReviewError> {
        let target = decision.verdict();
        let current = match self.manifest.get(patch_id) {
            None => return Ok(Err(Refused::UnknownId)),
            Some(row) => row.verdict,
        };
        if current == target {
            return Ok(Ok(Applied::Unchanged));
        }
        if current != Verdict::NeedsReview {
            return Ok(Err(Refused::NotPending(current)));
        }
        writeln!(self.wal, "{patch_id},{}", target.as_str()).map_err(|e| io(&self.wal_path, e))?;
        self.wal.sync_data().map_err(|e| io(&self.wal_path, e))?;
        if let Some(row) = self.manifest.get_mut(patch_id) {
            row.verdict = target;
        }
        Ok(Ok(Applied::Recorded))
    }

    pub fn export_csv(&self) -> String {
        self.manifest.to_csv_string()
    }

    /// Rewrite the manifest and drop the log.
    pub fn checkpoint(&mut self) -> Result<(), ReviewError> {
        self.manifest.write(&self.manifest_path)?;
        self.wal.set_len(0).map_err(|e| io(&self.wal_path, e))?;
        self.wal.sync_all().map_err(|e| io(&self.wal_path, e))?;
        Ok(())
    }

    pub fn close(mut self) -> Result<(), ReviewError> {
        self.checkpoint()?;
        drop(self.wal);
        fs::remove_file(&self.wal_path).map_err(|e| io(&self.wal_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use forge_core::{ClassLabel, ManifestRow};

    fn manifest() -> Manifest {
        let mut rows = Vec::new();
        for (i, v) in [Verdict::NeedsReview, Verdict::NeedsReview, Verdict::RejectDark, Verdict::Keep].into_iter().enumerate() {
            let mut r = ManifestRow::new(format!("img_r0_c{i}"), "img.jpg", ClassLabel::Tsh);
            r.verdict = v;
            rows.push(r);
        }
        Manifest::new(rows).unwrap()
    }

    #[test]
    fn replay_ignores_torn_and_foreign_lines() {
        let mut m = manifest();
        let n = replay(&mut m, "img_r0_c0,manual_keep\nimg_r0_c2,manual_keep\nbogus\nimg_r0_c1,manual_rej");
        assert_eq!(n, 1);
        assert_eq!(m.get("img_r0_c0").unwrap().verdict, Verdict::ManualKeep);
        assert_eq!(m.get("img_r0_c1").unwrap().verdict, Verdict::NeedsReview);
        assert_eq!(m.get("img_r0_c2").unwrap().verdict, Verdict::RejectDark);
    }

    #[test]
    fn decisions_follow_the_lattice() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        manifest().write(&path).unwrap();
        let mut store = ReviewStore::open(&path, dir.path()).unwrap();
        assert_eq!(store.progress(), Progress { pending: 2, decided: 0, total: 2 });
        assert_eq!(store.decide("img_r0_c0", Decision::Keep).unwrap(), Ok(Applied::Recorded));
        assert_eq!(store.decide("img_r0_c0", Decision::Keep).unwrap(), Ok(Applied::Unchanged));
        assert_eq!(
            store.decide("img_r0_c0", Decision::Reject).unwrap(),
            Err(Refused::NotPending(Verdict::ManualKeep))
        );
        assert_eq!(
            store.decide("img_r0_c2", Decision::Keep).unwrap(),
            Err(Refused::NotPending(Verdict::RejectDark))
        );
        assert_eq!(store.decide("nope", Decision::Keep).unwrap(), Err(Refused::UnknownId));
        assert_eq!(fs::read_to_string(wal_path_for(&path)).unwrap(), "img_r0_c0,manual_keep\n");
        store.close().unwrap();
        assert!(!wal_path_for(&path).exists());
        assert_eq!(Manifest::read(&path).unwrap().get("img_r0_c0").unwrap().verdict, Verdict::ManualKeep);
    }

    #[test]
    fn missing_patch_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        manifest().write(&path).unwrap();
        assert!(matches!(
            ReviewStore::open(&path, &dir.path().join("absent")),
            Err(ReviewError::MissingPatchDir(_))
        ));
    }
}
