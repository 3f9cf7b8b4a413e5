use std::fs;
use std::path::{Path, PathBuf};

use forge_core::dataset::{
    build_manifest, holdout_split, kfold_plan, verify_folds, verify_holdout, FoldPlan, LabelTable, SplitOptions,
    SplitRatios, VerificationReport,
};
use forge_core::filter::{calibrate_thresholds, filter_run, load_patch, report_path_for, FilterThresholds};
use forge_core::harness::{
    evaluate, external_backend_run, prepare_model, run_kfold, train, RunConfig, SampleSet, TrainMode,
};
use forge_core::metrics::{
    published_reports, read_results_dir, render_report, write_curves,
    write_folds_csv, FoldResult, RunReport,
};
use forge_core::model::save_checkpoint;
use forge_core::patcher::patch_directory;
use forge_core::synth::{generate_corpus, SynthConfig};
use forge_core::{Manifest, Split};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::{
    Command, FilterArgs, KfoldArgs, KfoldRunArgs, PatchArgs, ReportArgs, ReviewArgs, SplitArgs, SynthArgs, TrainArgs,
};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Patch(a) => patch(a),
        Command::Filter(a) => filter(a),
        Command::Review(a) => review(a),
        Command::Split(a) => split(a),
        Command::Kfold(a) => kfold(a),
        Command::Train(a) => train_cmd(a),
        Command::KfoldRun(a) => kfold_run(a),
        Command::Report(a) => report(a),
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::io(format!("{}: {e}", path.display()))
}

fn parent_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// `--patches`, or the directory the manifest lives in.
fn patch_dir_for(manifest: &Path, patches: Option<PathBuf>) -> PathBuf {
    patches.unwrap_or_else(|| parent_of(manifest))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn check(report: VerificationReport) -> Result<()> {
    if report.is_ok() {
        Ok(())
    } else {
        Err(CliError::validation(format!(
            "verification failed: {}",
            report.violations.join("; ")
        )))
    }
}

fn verdict_summary(manifest: &Manifest) -> String {
    manifest
        .verdict_counts()
        .iter()
        .map(|(v, n)| format!("{}={n}", v.as_str()))
        .collect::<Vec<_>>()
        .join(" ")
}

fn synth(a: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        images_per_class: a.images_per_class,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let corpus = generate_corpus(&a.output, &config)?;
    println!(
        "wrote {} images to {} and labels to {}",
        corpus.labels.len(),
        corpus.image_dir.display(),
        corpus.labels_path.display()
    );
    Ok(())
}

fn patch(a: PatchArgs) -> Result<()> {
    let labels = LabelTable::read(&a.labels)?;
    let ids = patch_directory(&a.input, &a.output, a.patch_size)?;
    let manifest = build_manifest(&a.output, &labels, None)?;
    let path = a.manifest.unwrap_or_else(|| a.output.join("manifest.csv"));
    manifest.write(&path)?;
    println!("{} patches, manifest {}", ids.len(), path.display());
    Ok(())
}

#[derive(Deserialize)]
struct LabeledPatch {
    patch_id: String,
    label: String,
}

fn read_labeled(path: &Path) -> Result<Vec<(String, bool)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for row in reader.deserialize::<LabeledPatch>() {
        let row = row.map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let keep = match row.label.trim() {
            "keep" => true,
            "reject" => false,
            other => {
                return Err(CliError::validation(format!(
                    "{}: label must be keep or reject, got {other:?}",
                    path.display()
                )))
            }
        };
        out.push((row.patch_id, keep));
    }
    Ok(out)
}

fn filter(a: FilterArgs) -> Result<()> {
    let patch_dir = patch_dir_for(&a.manifest, a.patches);
    let mut manifest = Manifest::read(&a.manifest)?;
    let thresholds = if let Some(labeled) = &a.calibrate {
        let labeled = read_labeled(labeled)?;
        let patches = labeled
            .iter()
            .map(|(id, keep)| load_patch(&patch_dir, id).map(|p| (p, *keep)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let cal = calibrate_thresholds(&patches)?;
        let path = sibling(&a.manifest, ".thresholds.toml");
        let text = toml::to_string(&cal.thresholds).map_err(|e| CliError::io(e.to_string()))?;
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        println!("calibrated thresholds (F1 {:.3}) written to {}", cal.f1, path.display());
        cal.thresholds
    } else if let Some(path) = &a.thresholds {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        toml::from_str::<FilterThresholds>(&text)
            .map_err(|e| CliError::validation(format!("{}: {}", path.display(), e.message())))?
    } else {
        FilterThresholds::default()
    };
    let report = filter_run(&mut manifest, &patch_dir, &thresholds)?;
    manifest.write(&a.manifest)?;
    let report_path = report_path_for(&a.manifest);
    report.write(&report_path)?;
    println!("{} ({})", verdict_summary(&manifest), report_path.display());
    Ok(())
}

fn review(a: ReviewArgs) -> Result<()> {
    let patch_dir = patch_dir_for(&a.manifest, a.patches);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::io(e.to_string()))?;
    runtime.block_on(async {
        let mut server =
            forge_review::start_review_server(&a.manifest, &patch_dir, a.port, a.static_dir.as_deref()).await?;
        println!("review server listening on {}", server.base_url());
        tokio::select! {
            r = tokio::signal::ctrl_c() => {
                r.map_err(|e| CliError::io(e.to_string()))?;
                server.shutdown().await?;
            }
            r = server.wait() => r?,
        }
        Ok(())
    })
}

fn split(a: SplitArgs) -> Result<()> {
    let ratios: SplitRatios = a.ratios.parse()?;
    let manifest = Manifest::read(&a.manifest)?;
    let options = SplitOptions {
        group_by_source: a.group_by_source,
        per_class_cap: a.per_class_cap,
    };
    let assignment = holdout_split(&manifest, ratios, a.seed, options)?;
    check(verify_holdout(&manifest, &assignment))?;
    let out = a.output.unwrap_or_else(|| sibling(&a.manifest, ".split.csv"));
    assignment.apply(&manifest).write(&out)?;
    println!(
        "train {} / validation {} / test {} -> {}",
        assignment.train.len(),
        assignment.validation.len(),
        assignment.test.len(),
        out.display()
    );
    Ok(())
}

fn absolute(path: &Path) -> PathBuf {
    fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf())
}

fn kfold(a: KfoldArgs) -> Result<()> {
    let manifest = Manifest::read(&a.manifest)?;
    let plan = kfold_plan(&manifest, a.k, a.validation_fraction, a.seed, a.per_class_cap)?;
    check(verify_folds(&manifest, &plan))?;
    let patch_dir = absolute(&patch_dir_for(&a.manifest, a.patches));
    let out = a.output.unwrap_or_else(|| parent_of(&a.manifest).join("folds"));
    plan.write_dir(&manifest, &out, Some(&patch_dir))?;
    let sizes: Vec<String> = plan.folds.iter().map(|f| f.test.len().to_string()).collect();
    println!("{} folds (test sizes {}) -> {}", plan.k, sizes.join(","), out.display());
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut config = RunConfig::read(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

#[derive(Serialize)]
struct RunSummaryFile<'a> {
    config: &'a RunConfig,
    record: &'a forge_core::harness::TrainRecord,
    test: Option<forge_core::harness::EvalResult>,
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let config = load_config(&a.config, a.seed)?;
    let manifest = Manifest::read(&a.split)?;
    let patch_dir = patch_dir_for(&a.split, a.patches);
    let load = |s| SampleSet::load_split(&manifest, s, &patch_dir, config.input_size);
    let (train_set, val_set, test_set) = (load(Split::Train)?, load(Split::Validation)?, load(Split::Test)?);
    let mut model = prepare_model(&config, 0)?;
    let record = train(&config, &mut model, &train_set, &val_set)?;
    let test = if test_set.is_empty() {
        None
    } else {
        Some(evaluate(&model, &test_set, config.test_batch)?)
    };

    let out = a.output.unwrap_or_else(|| sibling(&a.split, ".run"));
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    save_checkpoint(&model, &out.join("model.ckpt"))?;
    write_curves(&record, &out.join("curves.csv"))?;
    let summary = serde_json::to_string_pretty(&RunSummaryFile {
        config: &config,
        record: &record,
        test,
    })
    .map_err(|e| CliError::io(e.to_string()))?;
    let path = out.join("run.json");
    fs::write(&path, summary + "\n").map_err(|e| io_err(&path, e))?;

    let last = record.epochs.last().expect("at least one epoch");
    print!(
        "{} epochs ({:?}), validation loss {:.4}, validation accuracy {:.2}%",
        record.stop_epoch,
        record.stop_reason,
        last.validation_loss,
        100.0 * last.validation_accuracy
    );
    match test {
        Some(t) => println!(", test accuracy {:.2}% on {} patches", 100.0 * t.accuracy, t.samples),
        None => println!(),
    }
    Ok(())
}

fn mode_name(mode: TrainMode) -> &'static str {
    match mode {
        TrainMode::Transfer => "transfer",
        TrainMode::Scratch => "scratch",
    }
}

fn kfold_run(a: KfoldRunArgs) -> Result<()> {
    let config = load_config(&a.config, a.seed)?;
    let (plan, meta, manifests): (FoldPlan, _, _) = FoldPlan::read_dir(&a.plan)?;
    let manifest = manifests
        .into_iter()
        .next()
        .ok_or_else(|| CliError::validation("plan has no folds"))?;
    let patch_dir = match (a.patches, meta.patch_dir) {
        (Some(p), _) => p,
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => return Err(CliError::validation("plan does not record a patch directory; pass --patches")),
    };
    let out = a.output.unwrap_or_else(|| a.plan.join("results"));
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;

    let (model_name, results) = match &a.backend {
        Some(command) => {
            let scores = external_backend_run(&config, &plan, &manifest, &patch_dir, command, &out.join("job"))?;
            let results = scores
                .iter()
                .map(|s| FoldResult::from_fraction(s.fold, s.loss, s.accuracy))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            (a.model.unwrap_or_else(|| "external".into()), results)
        }
        None => {
            let mut curve_error = None;
            let runs = run_kfold(&config, &plan, &manifest, &patch_dir, |run| {
                let path = out.join(format!("fold_{}.curves.csv", run.fold + 1));
                if let Err(e) = write_curves(&run.record, &path) {
                    curve_error.get_or_insert(e);
                }
                println!(
                    "fold {}: loss {:.4}, accuracy {:.2}% ({} epochs)",
                    run.fold + 1,
                    run.test.loss,
                    100.0 * run.test.accuracy,
                    run.record.stop_epoch
                );
            })?;
            if let Some(e) = curve_error {
                return Err(e.into());
            }
            let results = runs
                .iter()
                .map(|r| FoldResult::from_fraction(r.fold, r.test.loss, r.test.accuracy))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            (a.model.unwrap_or_else(|| "MicroCNN".into()), results)
        }
    };
    let report = RunReport::new(model_name, mode_name(config.mode), results);
    let path = write_folds_csv(&report, &out)?;
    println!("{}", report.summary_line()?);
    println!("fold results: {}", path.display());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let reports = read_results_dir(&a.results)?;
    if reports.is_empty() && !a.published {
        return Err(CliError::validation(format!("no fold result files in {}", a.results.display())));
    }
    let out = a.output.unwrap_or_else(|| a.results.clone());
    let files = render_report(&reports, &out)?;
    for r in &reports {
        println!("{}", r.summary_line()?);
    }
    if let Some(c) = files.comparison {
        println!("comparison: {}", c.display());
    }
    if a.published {
        // Kept apart so published runs never shadow local ones of the same name.
        let published = published_reports();
        let files = render_report(&published, &out.join("published"))?;
        for r in &published {
            println!("published {}", r.summary_line()?);
        }
        if let Some(c) = files.comparison {
            println!("published comparison: {}", c.display());
        }
    }
    Ok(())
}
