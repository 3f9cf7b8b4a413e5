//! Python bindings: grid planning, patch statistics and filtering, manifests,
//! splits, fold statistics, the synthetic corpus and the reference CNN.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use forge_core::dataset::{self, LabelTable, SplitOptions, SplitRatios};
use forge_core::filter::{self, FilterThresholds};
use forge_core::imaging::{decode_image, resize_bilinear, RegionStats};
use forge_core::metrics::{fold_stats as fold_summary, FoldResult};
use forge_core::model::{self, batch_from_images, rows_of, CnnSpec, MicroCnn, Mode};
use forge_core::{patcher, synth};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn os_err(e: impl std::fmt::Display) -> PyErr {
    PyOSError::new_err(e.to_string())
}

fn dataset_err(e: dataset::DatasetError) -> PyErr {
    match e {
        dataset::DatasetError::Io(_) | dataset::DatasetError::Csv(_) => os_err(e),
        _ => value_err(e),
    }
}

fn stats_dict<'py>(py: Python<'py>, s: &RegionStats) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mean", s.mean)?;
    d.set_item("min", s.min)?;
    d.set_item("max", s.max)?;
    d.set_item("p05", s.p05)?;
    d.set_item("p95", s.p95)?;
    d.set_item("michelson", s.michelson)?;
    Ok(d)
}

/// Contrast-filter thresholds, all on the [0, 1] luminance scale.
#[pyclass(name = "Thresholds", from_py_object)]
#[derive(Clone)]
struct Thresholds {
    #[pyo3(get, set)]
    dark_mean: f64,
    #[pyo3(get, set)]
    dark_p95: f64,
    #[pyo3(get, set)]
    blank_contrast: f64,
    #[pyo3(get, set)]
    review_band: f64,
}

impl Thresholds {
    fn inner(&self) -> FilterThresholds {
        FilterThresholds {
            dark_mean: self.dark_mean,
            dark_p95: self.dark_p95,
            blank_contrast: self.blank_contrast,
            review_band: self.review_band,
        }
    }
}

impl From<FilterThresholds> for Thresholds {
    fn from(t: FilterThresholds) -> Self {
        Self {
            dark_mean: t.dark_mean,
            dark_p95: t.dark_p95,
            blank_contrast: t.blank_contrast,
            review_band: t.review_band,
        }
    }
}

#[pymethods]
impl Thresholds {
    #[new]
    #[pyo3(signature = (dark_mean = 0.12, dark_p95 = 0.20, blank_contrast = 0.06, review_band = 0.04))]
    fn new(dark_mean: f64, dark_p95: f64, blank_contrast: f64, review_band: f64) -> PyResult<Self> {
        let t = FilterThresholds {
            dark_mean,
            dark_p95,
            blank_contrast,
            review_band,
        };
        t.validate().map_err(value_err)?;
        Ok(t.into())
    }

    /// Verdict name for a patch with these statistics.
    fn classify(&self, mean: f64, p95: f64, michelson: f64) -> &'static str {
        let stats = RegionStats {
            mean,
            min: f64::NAN,
            max: f64::NAN,
            p05: f64::NAN,
            p95,
            michelson,
        };
        filter::classify_stats(&stats, &self.inner()).as_str()
    }

    fn __repr__(&self) -> String {
        format!(
            "Thresholds(dark_mean={}, dark_p95={}, blank_contrast={}, review_band={})",
            self.dark_mean, self.dark_p95, self.blank_contrast, self.review_band
        )
    }
}

/// Patch manifest (`patch_id,source_image,class,verdict,split,fold`).
#[pyclass(name = "Manifest")]
struct PyManifest {
    inner: forge_core::Manifest,
}

#[pymethods]
impl PyManifest {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: forge_core::Manifest::read(&path).map_err(dataset_err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(&path).map_err(dataset_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn verdict_counts(&self) -> BTreeMap<&'static str, usize> {
        self.inner.verdict_counts().into_iter().map(|(v, n)| (v.as_str(), n)).collect()
    }

    fn class_counts(&self) -> BTreeMap<&'static str, usize> {
        forge_core::ClassLabel::ALL
            .iter()
            .map(|c| (c.code(), self.inner.class_counts()[c.index()]))
            .collect()
    }

    fn verdict(&self, patch_id: &str) -> Option<&'static str> {
        self.inner.get(patch_id).map(|r| r.verdict.as_str())
    }

    fn ids(&self) -> Vec<String> {
        self.inner.rows().iter().map(|r| r.patch_id.clone()).collect()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv_string()
    }
}

/// The reference CNN (three 3x3 conv blocks, dense head, softmax over 5 classes).
#[pyclass(name = "Model")]
struct PyModel {
    inner: MicroCnn<f32>,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (seed = 0))]
    fn new(seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: MicroCnn::new(CnnSpec::micro(), seed).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: model::load_checkpoint(&path).map_err(os_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        model::save_checkpoint(&self.inner, &path).map_err(os_err)
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.params.num_params()
    }

    #[getter]
    fn input_size(&self) -> usize {
        self.inner.spec.input_size
    }

    /// Class probabilities for each image file, resized to the input size.
    fn predict(&self, py: Python<'_>, paths: Vec<PathBuf>) -> PyResult<Vec<Vec<f32>>> {
        let size = self.inner.spec.input_size;
        let images = paths
            .iter()
            .map(|p| {
                let bytes = std::fs::read(p).map_err(|e| os_err(format!("{}: {e}", p.display())))?;
                let img = decode_image(&bytes).map_err(value_err)?;
                Ok(resize_bilinear(&img, size, size))
            })
            .collect::<PyResult<Vec<_>>>()?;
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let model = &self.inner;
        py.detach(|| {
            let refs: Vec<_> = images.iter().collect();
            let probs = model.forward(&batch_from_images::<f32>(&refs), Mode::Eval)?;
            Ok(rows_of(&probs))
        })
        .map_err(|e: model::ModelError| value_err(e))
    }
}

/// Grid plan for an image: rows, cols, padding and (x, y) of every patch.
#[pyfunction]
fn plan_grid(py: Python<'_>, width: usize, height: usize, patch_size: usize) -> PyResult<Bound<'_, PyDict>> {
    let plan = patcher::plan_grid(width, height, patch_size).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("rows", plan.rows)?;
    d.set_item("cols", plan.cols)?;
    d.set_item("pad_right", plan.pad_right)?;
    d.set_item("pad_bottom", plan.pad_bottom)?;
    d.set_item("origins", plan.rects.iter().map(|r| (r.x, r.y)).collect::<Vec<_>>())?;
    Ok(d)
}

/// Cut every image in `input` into `patch_size` patches under `output`.
#[pyfunction]
fn patch_directory(py: Python<'_>, input: PathBuf, output: PathBuf, patch_size: usize) -> PyResult<Vec<String>> {
    py.detach(|| patcher::patch_directory(&input, &output, patch_size)).map_err(os_err)
}

/// Luminance statistics of the image file at `path`.
#[pyfunction]
fn patch_stats(py: Python<'_>, path: PathBuf) -> PyResult<Bound<'_, PyDict>> {
    let bytes = std::fs::read(&path).map_err(|e| os_err(format!("{}: {e}", path.display())))?;
    let img = decode_image(&bytes).map_err(value_err)?;
    stats_dict(py, &filter::patch_stats(&img))
}

/// Manifest for the patches in `patch_dir`, classes from a
/// `source_image,class` CSV.
#[pyfunction]
fn build_manifest(patch_dir: PathBuf, labels: PathBuf) -> PyResult<PyManifest> {
    let labels = LabelTable::read(&labels).map_err(dataset_err)?;
    let inner = dataset::build_manifest(&patch_dir, &labels, None).map_err(dataset_err)?;
    Ok(PyManifest { inner })
}

/// Classify every row in place; returns verdict counts.
#[pyfunction]
#[pyo3(signature = (manifest, patch_dir, thresholds = None))]
fn filter_manifest(
    py: Python<'_>,
    manifest: &mut PyManifest,
    patch_dir: PathBuf,
    thresholds: Option<Thresholds>,
) -> PyResult<BTreeMap<&'static str, usize>> {
    let t = thresholds.map(|t| t.inner()).unwrap_or_default();
    let inner = &mut manifest.inner;
    py.detach(|| filter::filter_run(inner, &patch_dir, &t))
        .map_err(|e| match e {
            filter::FilterError::InvalidThresholds(_) => value_err(e),
            _ => os_err(e),
        })?;
    Ok(manifest.verdict_counts())
}

/// Stratified holdout split of eligible rows: `{"train": [...], "validation": [...], "test": [...]}`.
#[pyfunction]
#[pyo3(signature = (manifest, ratios = "76.5,13.5,10", seed = 0, group_by_source = false, per_class_cap = None))]
fn holdout_split(
    manifest: &PyManifest,
    ratios: &str,
    seed: u64,
    group_by_source: bool,
    per_class_cap: Option<usize>,
) -> PyResult<BTreeMap<&'static str, Vec<String>>> {
    let ratios: SplitRatios = ratios.parse().map_err(value_err)?;
    let options = SplitOptions {
        group_by_source,
        per_class_cap,
    };
    let a = dataset::holdout_split(&manifest.inner, ratios, seed, options).map_err(dataset_err)?;
    Ok(BTreeMap::from([("train", a.train), ("validation", a.validation), ("test", a.test)]))
}

/// Stratified k-fold plan; one `{"train", "validation", "test"}` dict per fold.
#[pyfunction]
#[pyo3(signature = (manifest, k = 10, seed = 0, validation_fraction = 0.15))]
fn kfold_plan(
    manifest: &PyManifest,
    k: usize,
    seed: u64,
    validation_fraction: f64,
) -> PyResult<Vec<BTreeMap<&'static str, Vec<String>>>> {
    let plan = dataset::kfold_plan(&manifest.inner, k, validation_fraction, seed, None).map_err(dataset_err)?;
    Ok(plan
        .folds
        .into_iter()
        .map(|f| BTreeMap::from([("train", f.train), ("validation", f.validation), ("test", f.test)]))
        .collect())
}

/// Mean loss, mean accuracy and population standard deviation of accuracy
/// (accuracies in percent).
#[pyfunction]
fn fold_stats(losses: Vec<f64>, accuracies: Vec<f64>) -> PyResult<BTreeMap<&'static str, f64>> {
    if losses.len() != accuracies.len() {
        return Err(value_err("losses and accuracies differ in length"));
    }
    let results = losses
        .iter()
        .zip(&accuracies)
        .enumerate()
        .map(|(i, (&l, &a))| FoldResult::new(i + 1, l, a))
        .collect::<Result<Vec<_>, _>>()
        .map_err(value_err)?;
    let s = fold_summary(&results).map_err(value_err)?;
    Ok(BTreeMap::from([
        ("average_loss", s.average_loss),
        ("average_accuracy", s.average_accuracy),
        ("std_accuracy", s.std_accuracy),
    ]))
}

/// Write the synthetic five-class corpus under `dir`; returns the labels CSV path.
#[pyfunction]
#[pyo3(signature = (dir, images_per_class = 6, seed = 0))]
fn generate_corpus(py: Python<'_>, dir: PathBuf, images_per_class: usize, seed: u64) -> PyResult<String> {
    let config = synth::SynthConfig {
        images_per_class,
        seed,
        ..Default::default()
    };
    let corpus = py.detach(|| synth::generate_corpus(Path::new(&dir), &config)).map_err(dataset_err)?;
    Ok(corpus.labels_path.to_string_lossy().into_owned())
}

#[pymodule]
pub fn forge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Thresholds>()?;
    m.add_class::<PyManifest>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(plan_grid, m)?)?;
    m.add_function(wrap_pyfunction!(patch_directory, m)?)?;
    m.add_function(wrap_pyfunction!(patch_stats, m)?)?;
    m.add_function(wrap_pyfunction!(build_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(filter_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(holdout_split, m)?)?;
    m.add_function(wrap_pyfunction!(kfold_plan, m)?)?;
    m.add_function(wrap_pyfunction!(fold_stats, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add("CLASSES", forge_core::ClassLabel::ALL.iter().map(|c| c.code()).collect::<Vec<_>>())?;
    Ok(())
}
