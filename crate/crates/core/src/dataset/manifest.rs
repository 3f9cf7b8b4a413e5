//! The canonical per-patch record and its CSV form.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ClassLabel, DatasetError, NUM_CLASSES};
use crate::filter::FilterReport;
use crate::patcher::{parse_patch_id, source_stem};

pub const MANIFEST_HEADER: &str = "patch_id,source_image,class,verdict,split,fold";

/// Filter / triage state of a patch. `ManualKeep` and `ManualReject` are
/// only ever produced by the review service.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Keep,
    RejectDark,
    RejectBlank,
    NeedsReview,
    ManualKeep,
    ManualReject,
}

impl Verdict {
    pub const ALL: [Verdict; 6] = [
        Verdict::Keep,
        Verdict::RejectDark,
        Verdict::RejectBlank,
        Verdict::NeedsReview,
        Verdict::ManualKeep,
        Verdict::ManualReject,
    ];

    pub fn is_manual(self) -> bool {
        matches!(self, Verdict::ManualKeep | Verdict::ManualReject)
    }

    /// Only kept rows may be assigned to a split or fold.
    pub fn is_eligible(self) -> bool {
        matches!(self, Verdict::Keep | Verdict::ManualKeep)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Keep => "keep",
            Verdict::RejectDark => "reject_dark",
            Verdict::RejectBlank => "reject_blank",
            Verdict::NeedsReview => "needs_review",
            Verdict::ManualKeep => "manual_keep",
            Verdict::ManualReject => "manual_reject",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown verdict {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
    #[default]
    Unassigned,
}

impl Split {
    pub const PARTS: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub patch_id: String,
    pub source_image: String,
    pub class: ClassLabel,
    pub verdict: Verdict,
    pub split: Split,
    pub fold: Option<usize>,
}

impl ManifestRow {
    pub fn new(patch_id: impl Into<String>, source_image: impl Into<String>, class: ClassLabel) -> Self {
        Self {
            patch_id: patch_id.into(),
            source_image: source_image.into(),
            class,
            verdict: Verdict::Keep,
            split: Split::Unassigned,
            fold: None,
        }
    }
}

/// Rows sorted by `patch_id`, ids unique.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn new(mut rows: Vec<ManifestRow>) -> Result<Self, DatasetError> {
        rows.sort_by(|a, b| a.patch_id.cmp(&b.patch_id));
        if let Some(w) = rows.windows(2).find(|w| w[0].patch_id == w[1].patch_id) {
            return Err(DatasetError::DuplicatePatchId(w[0].patch_id.clone()));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn position(&self, patch_id: &str) -> Option<usize> {
        self.rows
            .binary_search_by(|r| r.patch_id.as_str().cmp(patch_id))
            .ok()
    }

    pub fn get(&self, patch_id: &str) -> Option<&ManifestRow> {
        self.position(patch_id).map(|i| &self.rows[i])
    }

    pub fn get_mut(&mut self, patch_id: &str) -> Option<&mut ManifestRow> {
        self.position(patch_id).map(move |i| &mut self.rows[i])
    }

    /// Rows rows eligible for splitting, in id order.
    pub fn eligible(&self) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(|r| r.verdict.is_eligible())
    }

    pub fn verdict_counts(&self) -> BTreeMap<Verdict, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.rows {
            *counts.entry(r.verdict).or_insert(0) += 1;
        }
        counts
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for r in &self.rows {
            counts[r.class.index()] += 1;
        }
        counts
    }

    pub fn from_reader(reader: impl Read) -> Result<Self, DatasetError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
        if headers != MANIFEST_HEADER {
            return Err(DatasetError::Malformed(format!(
                "manifest header {headers:?}, expected {MANIFEST_HEADER:?}"
            )));
        }
        let rows = rdr.deserialize().collect::<Result<Vec<ManifestRow>, _>>()?;
        Self::new(rows)
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let file = fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn write_to(&self, writer: impl Write) -> Result<(), DatasetError> {
        let mut wtr = csv::Writer::from_writer(writer);
        if self.rows.is_empty() {
            wtr.write_record(MANIFEST_HEADER.split(','))?;
        }
        for r in &self.rows {
            wtr.serialize(r)?;
        }
        wtr.flush().map_err(|e| DatasetError::Io(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory csv write");
        String::from_utf8(buf).expect("manifest csv is utf-8")
    }

    /// Write via a temporary file and rename, so readers never see a torn file.
    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let tmp = path.with_extension("csv.tmp");
        {
            let mut file = fs::File::create(&tmp).map_err(|e| DatasetError::io(&tmp, e))?;
            self.write_to(&mut file)?;
            file.sync_all().map_err(|e| DatasetError::io(&tmp, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| DatasetError::io(path, e))
    }
}

/// Source image name and class for each source stem.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelTable {
    by_stem: BTreeMap<String, (String, ClassLabel)>,
}

#[derive(Deserialize)]
struct LabelRecord {
    source_image: String,
    class: String,
}

impl LabelTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, source_image: &str, class: ClassLabel) -> Result<(), DatasetError> {
        let stem = source_stem(source_image);
        if let Some((prev, _)) = self.by_stem.get(&stem) {
            if prev != source_image {
                return Err(DatasetError::DuplicatePatchId(format!(
                    "sources {prev} and {source_image} share stem {stem}"
                )));
            }
        }
        self.by_stem.insert(stem, (source_image.to_string(), class));
        Ok(())
    }

    pub fn lookup_stem(&self, stem: &str) -> Option<(&str, ClassLabel)> {
        self.by_stem.get(stem).map(|(s, c)| (s.as_str(), *c))
    }

    pub fn lookup(&self, source_image: &str) -> Option<ClassLabel> {
        self.lookup_stem(&source_stem(source_image)).map(|(_, c)| c)
    }

    pub fn len(&self) -> usize {
        self.by_stem.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_stem.is_empty()
    }

    /// Number of labelled source images per class.
    pub fn inventory(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for (_, c) in self.by_stem.values() {
            counts[c.index()] += 1;
        }
        counts
    }

    /// CSV with header `source_image,class`.
    pub fn from_reader(reader: impl Read) -> Result<Self, DatasetError> {
        let mut table = Self::new();
        let mut rdr = csv::Reader::from_reader(reader);
        for rec in rdr.deserialize::<LabelRecord>() {
            let rec = rec?;
            let class = rec.class.parse().map_err(DatasetError::Malformed)?;
            table.insert(&rec.source_image, class)?;
        }
        Ok(table)
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let file = fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn write_to(&self, writer: impl Write) -> Result<(), DatasetError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["source_image", "class"])?;
        for (source, class) in self.by_stem.values() {
            wtr.write_record([source.as_str(), class.code()])?;
        }
        wtr.flush().map_err(|e| DatasetError::Io(e.to_string()))?;
        Ok(())
    }
}

/// One row per `<patch_id>.png` in `patch_dir`. Verdicts come from `report`
/// when it has the patch, otherwise `Keep`.
pub fn build_manifest(
    patch_dir: &Path,
    labels: &LabelTable,
    report: Option<&FilterReport>,
) -> Result<Manifest, DatasetError> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(patch_dir).map_err(|e| DatasetError::io(patch_dir, e))? {
        let path = entry.map_err(|e| DatasetError::io(patch_dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            ids.push(stem.to_string());
        }
    }
    ids.sort();
    let mut rows = Vec::with_capacity(ids.len());
    for id in ids {
        let (stem, _, _) =
            parse_patch_id(&id).ok_or_else(|| DatasetError::Malformed(format!("not a patch id: {id}")))?;
        let (source, class) = labels
            .lookup_stem(stem)
            .ok_or_else(|| DatasetError::UnlabeledSource(stem.to_string()))?;
        let mut row = ManifestRow::new(&id, source, class);
        if let Some(v) = report.and_then(|r| r.verdict_of(&id)) {
            row.verdict = v;
        }
        rows.push(row);
    }
    Manifest::new(rows)
}
