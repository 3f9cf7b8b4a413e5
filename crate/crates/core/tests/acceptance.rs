//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Each check compares against an oracle computed here
//! rather than against the library's own helpers.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use forge_core::dataset::{
    holdout_split, kfold_plan, verify_split, Assignment, ClassLabel, Manifest, ManifestRow, SplitOptions,
    SplitRatios, Verdict,
};
use forge_core::filter::{
    calibrate_thresholds, classify_patch, filter_run, patch_stats, FilterThresholds,
};
use forge_core::harness::{
    batch_sizes, evaluate, prepare_model, run_epochs, train, EpochRecord, Protocol, RunConfig, SampleSet,
    StopReason, TrainMode,
};
use forge_core::imaging::{ImageBuffer, RegionStats};
use forge_core::metrics::{audit_table, published_tables};
use forge_core::model::{CnnSpec, MicroCnn, Mode};
use forge_core::patcher::{patch_directory, plan_grid};
use forge_core::synth::{generate_corpus, SynthConfig};
use forge_core::SeededStream;
use ndarray::Array4;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn grid_law() -> Outcome {
    let plan = plan_grid(5152, 3864, 500).map_err(|e| e.to_string())?;
    ensure(plan.rects.len() == 88, || format!("5152x3864 @ 500 gave {} patches", plan.rects.len()))?;
    let mut cases = 0;
    for p in 1..=12usize {
        for w in 1..=60usize {
            for h in 1..=60usize {
                let expect = w.div_ceil(p) * h.div_ceil(p);
                let got = plan_grid(w, h, p).map_err(|e| e.to_string())?.rects.len();
                ensure(got == expect, || format!("({w},{h},{p}): {got} != {expect}"))?;
                cases += 1;
            }
        }
    }
    Ok(format!("88 patches at 5152x3864/500; {cases} scaled-down cases match ceil(W/P)*ceil(H/P)"))
}

fn tables_consistency() -> Outcome {
    let tol = 1e-3;
    let mut swaps = Vec::new();
    let mut checked = 0;
    for table in published_tables() {
        let audit = audit_table(&table);
        for (col, a) in table.columns.iter().zip(&audit) {
            let n = col.folds.len() as f64;
            let loss = col.folds.iter().map(|f| f.0).sum::<f64>() / n;
            let acc = col.folds.iter().map(|f| f.1).sum::<f64>() / n;
            let std = (col.folds.iter().map(|f| (f.1 - acc).powi(2)).sum::<f64>() / n).sqrt();
            let label = format!("{} {}", table.setting, col.model);
            ensure((loss - col.average_loss).abs() <= tol, || format!("{label}: loss {loss} vs {}", col.average_loss))?;
            ensure((std - col.std_accuracy).abs() <= tol, || format!("{label}: std {std} vs {}", col.std_accuracy))?;
            ensure((a.recomputed.average_accuracy - acc).abs() < 1e-9, || format!("{label}: library mean differs"))?;
            ensure((a.recomputed.std_accuracy - std).abs() < 1e-9, || format!("{label}: library std differs"))?;
            let own_match = (acc - col.average_accuracy).abs() <= tol;
            if !own_match {
                let partner = table
                    .columns
                    .iter()
                    .find(|o| {
                        let o_acc = o.folds.iter().map(|f| f.1).sum::<f64>() / n;
                        (o_acc - col.average_accuracy).abs() <= tol && (acc - o.average_accuracy).abs() <= tol
                    })
                    .ok_or_else(|| format!("{label}: mean {acc:.3} vs printed {} with no partner", col.average_accuracy))?;
                ensure(a.swapped_with == Some(partner.model), || format!("{label}: swap not flagged"))?;
                swaps.push(format!("{label}<->{}", partner.model));
            } else {
                ensure(a.swapped_with.is_none(), || format!("{label}: spurious swap flag"))?;
            }
            checked += 1;
        }
    }
    let tables = published_tables();
    let vgg_tl = &tables[0].columns[1];
    let vgg_mean = vgg_tl.folds.iter().map(|f| f.1).sum::<f64>() / 10.0;
    ensure((vgg_mean - 85.040).abs() <= tol, || format!("VGG16 transfer mean {vgg_mean}"))?;
    let scratch = &tables[1];
    let inc = &scratch.columns[2];
    let inc_mean = inc.folds.iter().map(|f| f.1).sum::<f64>() / 10.0;
    ensure((inc_mean - 73.280).abs() <= tol, || format!("InceptionV3 scratch mean {inc_mean}"))?;
    let res_mean = scratch.columns[0].folds.iter().map(|f| f.1).sum::<f64>() / 10.0;
    ensure((res_mean - 66.120).abs() <= tol, || format!("ResNet50 scratch mean {res_mean}"))?;
    ensure(swaps.len() == 2, || format!("expected one swapped pair, got {swaps:?}"))?;
    Ok(format!("{checked} columns within 0.001; swapped transfer accuracy row flagged ({})", swaps[0]))
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

struct DrawResult {
    worst: f64,
    checked: usize,
    skipped: usize,
}

/// Central differences (h = 1e-5) on every parameter, or on `per_tensor`
/// random coordinates of each tensor. With `screen_kinks`, coordinates whose
/// +h and -h passes take different ReLU/pooling branches are skipped, since
/// the loss is not differentiable across such a step.
fn gradient_draw(
    spec: CnnSpec,
    seed: u64,
    per_tensor: Option<usize>,
    with_dropout_mask: bool,
    screen_kinks: bool,
) -> Result<DrawResult, String> {
    fn mode(m: &mut Option<SeededStream>) -> Mode<'_> {
        match m {
            Some(stream) => Mode::Train(stream),
            None => Mode::Eval,
        }
    }
    let model = MicroCnn::<f64>::new(spec.clone(), seed).map_err(|e| e.to_string())?;
    let mut rng = SeededStream::substream(seed, &[1]);
    let s = spec.input_size;
    let batch = Array4::from_shape_simple_fn((3, 3, s, s), || rng.next_f64());
    let targets: Vec<usize> = (0..3).map(|_| rng.below(spec.classes as u64) as usize).collect();
    let mask_seed = seed ^ 0x5eed;
    let fresh = || with_dropout_mask.then(|| SeededStream::new(mask_seed));
    let pass = |m: &MicroCnn<f64>| {
        let mut stream = fresh();
        m.forward_cached(&batch, mode(&mut stream)).map_err(|e| e.to_string())
    };
    let cache = pass(&model)?;
    let grads = model.backward(&cache, &targets, true).map_err(|e| e.to_string())?;
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();

    let h = 1e-5;
    let mut probe = model.clone();
    let mut out = DrawResult { worst: 0.0, checked: 0, skipped: 0 };
    for (ti, g) in analytic.iter().enumerate() {
        let coords: Vec<usize> = match per_tensor {
            None => (0..g.len()).collect(),
            Some(n) => (0..n.min(g.len())).map(|_| rng.below(g.len() as u64) as usize).collect(),
        };
        for j in coords {
            let orig = probe.params.tensors()[ti][j];
            probe.params.tensors_mut()[ti][j] = orig + h;
            let up = pass(&probe)?;
            probe.params.tensors_mut()[ti][j] = orig - h;
            let down = pass(&probe)?;
            probe.params.tensors_mut()[ti][j] = orig;
            if screen_kinks && !(up.same_activation_pattern(&cache) && down.same_activation_pattern(&cache)) {
                out.skipped += 1;
                continue;
            }
            let numeric = (MicroCnn::loss(&up, &targets) - MicroCnn::loss(&down, &targets)) / (2.0 * h);
            out.worst = out.worst.max(relative_error(g[j], numeric));
            out.checked += 1;
        }
    }
    Ok(out)
}

fn gradient_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut rng = SeededStream::new(2024);
    // Random small models: every parameter, no screening.
    let small_draws = 24;
    for d in 0..small_draws {
        let size = [4usize, 8][rng.below(2) as usize];
        let depth = if size == 4 { 1 + rng.below(2) as usize } else { 1 + rng.below(3) as usize };
        let spec = CnnSpec {
            input_size: size,
            in_channels: 3,
            conv_channels: (0..depth).map(|_| 1 + rng.below(4) as usize).collect(),
            dense_units: 2 + rng.below(6) as usize,
            classes: 5,
            dropout: (d % 3 == 0).then_some(0.5),
        };
        let r = gradient_draw(spec.clone(), 100 + d, None, spec.dropout.is_some(), false)?;
        ensure(r.worst < 1e-4, || format!("draw {d} {spec:?}: max relative error {:e}", r.worst))?;
        worst = worst.max(r.worst);
        checked += r.checked;
    }
    // The full 64x64 architecture: sampled coordinates, skipping the few
    // whose +-h step crosses a ReLU or pooling boundary somewhere in the
    // ~200k activations.
    let mut full_worst: f64 = 0.0;
    let (mut full_checked, mut skipped) = (0, 0);
    for d in 0..6u64 {
        let spec = CnnSpec::micro().with_dropout((d % 2 == 1).then_some(0.5));
        let r = gradient_draw(spec, 500 + d, Some(6), d % 2 == 1, true)?;
        ensure(r.worst < 1e-4, || format!("full-size draw {d}: max relative error {:e}", r.worst))?;
        full_worst = full_worst.max(r.worst);
        full_checked += r.checked;
        skipped += r.skipped;
    }
    ensure(full_checked > skipped, || format!("full-size draws: {skipped} of {} coordinates crossed a kink", full_checked + skipped))?;
    Ok(format!(
        "{small_draws} random small models, {checked} parameters, max relative error {worst:.2e}; \
         full-size: {full_checked} coordinates, max {full_worst:.2e} ({skipped} kink-crossing skipped)"
    ))
}

fn random_manifest(rng: &mut SeededStream, trial: usize) -> Manifest {
    let mut rows = Vec::new();
    for class in ClassLabel::ALL {
        // Enough eligible rows per class for 10 folds.
        let mut eligible = 0;
        let mut s = 0;
        while s < 3 || eligible < 10 {
            let patches = 2 + rng.below(12) as usize;
            for p in 0..patches {
                let source = format!("t{trial}_{}_{s}.jpg", class.code());
                let mut row = ManifestRow::new(format!("t{trial}_{}_{s}_r0_c{p}", class.code()), source, class);
                row.verdict = match rng.below(10) {
                    0 => Verdict::RejectDark,
                    1 => Verdict::RejectBlank,
                    2 => Verdict::ManualKeep,
                    3 => Verdict::NeedsReview,
                    _ => Verdict::Keep,
                };
                eligible += usize::from(row.verdict.is_eligible());
                rows.push(row);
            }
            s += 1;
        }
    }
    Manifest::new(rows).expect("unique ids")
}

/// Exact quota per part for one class, as rationals compared with a
/// tolerance of one row.
fn within_one_row(count: usize, class_total: usize, share: f64) -> bool {
    (count as f64 - class_total as f64 * share).abs() < 1.0 + 1e-9
}

fn split_properties() -> Outcome {
    let mut rng = SeededStream::new(77);
    let ratios = [SplitRatios::TRAIN_VALIDATION_TEST, SplitRatios::TRAIN_VALIDATION];
    for trial in 0..100usize {
        let m = random_manifest(&mut rng, trial);
        let seed = rng.next_u64();
        let r = ratios[trial % 2];
        let opts = SplitOptions::default();
        let a = holdout_split(&m, r, seed, opts).map_err(|e| format!("trial {trial}: {e}"))?;
        let report = verify_split(&m, Assignment::Holdout(&a));
        ensure(report.is_ok(), || format!("trial {trial}: {:?}", report.violations))?;

        // Independent partition check.
        let eligible: Vec<&ManifestRow> = m.rows().iter().filter(|r| matches!(r.verdict, Verdict::Keep | Verdict::ManualKeep)).collect();
        let parts = [&a.train, &a.validation, &a.test];
        let shares = [r.train / 100.0, r.validation / 100.0, r.test / 100.0];
        let mut seen = BTreeSet::new();
        for p in parts {
            for id in p.iter() {
                ensure(seen.insert(id.clone()), || format!("trial {trial}: {id} in two parts"))?;
            }
        }
        ensure(seen.len() == eligible.len(), || format!("trial {trial}: covers {} of {}", seen.len(), eligible.len()))?;
        for class in ClassLabel::ALL {
            let total = eligible.iter().filter(|r| r.class == class).count();
            for (p, share) in parts.iter().zip(shares) {
                let c = p.iter().filter(|id| m.get(id).map(|r| r.class) == Some(class)).count();
                ensure(within_one_row(c, total, share), || format!("trial {trial}: {class} {c} of {total} at {share}"))?;
            }
        }
        let again = holdout_split(&m, r, seed, opts).map_err(|e| e.to_string())?;
        ensure(a.apply(&m).to_csv_string() == again.apply(&m).to_csv_string(), || format!("trial {trial}: holdout not reproducible"))?;

        let plan = kfold_plan(&m, 10, 0.15, seed, None).map_err(|e| format!("trial {trial}: {e}"))?;
        let report = verify_split(&m, Assignment::Folds(&plan));
        ensure(report.is_ok(), || format!("trial {trial} folds: {:?}", report.violations))?;
        let mut tested = BTreeSet::new();
        for fold in &plan.folds {
            for id in &fold.test {
                ensure(tested.insert(id.clone()), || format!("trial {trial}: {id} tested twice"))?;
            }
            for class in ClassLabel::ALL {
                let total = eligible.iter().filter(|r| r.class == class).count();
                let c = fold.test.iter().filter(|id| m.get(id).map(|r| r.class) == Some(class)).count();
                ensure(within_one_row(c, total, 0.1), || format!("trial {trial}: fold {} {class} test {c}/{total}", fold.index))?;
            }
        }
        ensure(tested.len() == eligible.len(), || format!("trial {trial}: folds test {} of {}", tested.len(), eligible.len()))?;
        let again = kfold_plan(&m, 10, 0.15, seed, None).map_err(|e| e.to_string())?;
        for i in 0..10 {
            ensure(
                plan.fold_manifest(&m, i).to_csv_string() == again.fold_manifest(&m, i).to_csv_string(),
                || format!("trial {trial}: fold {i} not reproducible"),
            )?;
        }
    }
    Ok("100 randomized manifests: holdout and 10-fold verified, stratified within 1 row, byte-identical reruns".into())
}

fn oracle_keep(s: &RegionStats, dm: f64, dp: f64, blank: f64, band: f64) -> bool {
    !(s.mean < dm || s.p95 < dp) && s.michelson >= blank && s.michelson >= blank + band
}

fn oracle_f1(labeled: &[(RegionStats, bool)], dm: f64, dp: f64, blank: f64, band: f64) -> f64 {
    let (mut tp, mut fp, mut fnn) = (0, 0, 0);
    for (s, keep) in labeled {
        match (oracle_keep(s, dm, dp, blank, band), keep) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            _ => {}
        }
    }
    if 2 * tp + fp + fnn == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fnn) as f64
    }
}

fn filter_fixtures() -> Outcome {
    let t = FilterThresholds::default();
    let black = ImageBuffer::filled(64, 64, [0, 0, 0]);
    let bright = ImageBuffer::filled(64, 64, [235, 235, 235]);
    let checker = ImageBuffer::from_fn(64, 64, |x, y| if (x / 4 + y / 4) % 2 == 0 { [20; 3] } else { [220; 3] });
    for (name, img, want) in [
        ("all-black", &black, Verdict::RejectDark),
        ("uniform bright", &bright, Verdict::RejectBlank),
        ("checkerboard", &checker, Verdict::Keep),
    ] {
        let got = classify_patch(img, &t).verdict;
        ensure(got == want, || format!("{name}: {got:?}, expected {want:?}"))?;
    }

    // 20 separable patches: 10 textured keeps, 5 dark and 5 blank rejects.
    let mut rng = SeededStream::new(5);
    let mut labeled = Vec::new();
    for i in 0..10 {
        let lo = 30 + rng.below(40) as u8;
        let hi = 170 + rng.below(60) as u8;
        let period = 2 + i % 5;
        labeled.push((ImageBuffer::from_fn(40, 40, |x, y| if (x / period + y / period) % 2 == 0 { [lo; 3] } else { [hi; 3] }), true));
    }
    for i in 0..5 {
        let v = (i * 5) as u8;
        labeled.push((ImageBuffer::from_fn(40, 40, |x, _| [v + (x % 3) as u8; 3]), false));
    }
    for i in 0..5 {
        let v = 180 + (i * 12) as u8;
        labeled.push((ImageBuffer::from_fn(40, 40, |x, y| [v + ((x + y) % 2) as u8; 3]), false));
    }
    let cal = calibrate_thresholds(&labeled).map_err(|e| e.to_string())?;

    // Brute force over the same 0.01 grid: every blank/band pair, and the
    // dark thresholds at each point where some patch changes side.
    let stats: Vec<(RegionStats, bool)> = labeled.iter().map(|(p, k)| (patch_stats(p), *k)).collect();
    let grid = |k: usize| k as f64 / 100.0;
    let reps = |vals: Vec<f64>| -> Vec<usize> {
        let mut r: BTreeSet<usize> = [1usize, 100].into();
        for v in vals {
            if let Some(k) = (1..=100).find(|&k| v < grid(k)) {
                r.insert(k);
            }
        }
        r.into_iter().collect()
    };
    let dms = reps(stats.iter().map(|(s, _)| s.mean).collect());
    let dps = reps(stats.iter().map(|(s, _)| s.p95).collect());
    let mut best: f64 = 0.0;
    for &dm in &dms {
        for &dp in &dps {
            for blank in 0..dp {
                for band in 0..dm {
                    best = best.max(oracle_f1(&stats, grid(dm), grid(dp), grid(blank), grid(band)));
                }
            }
        }
    }
    ensure((cal.f1 - best).abs() < 1e-12, || format!("calibrated F1 {} vs brute-force {best}", cal.f1))?;
    let th = cal.thresholds;
    let own = oracle_f1(&stats, th.dark_mean, th.dark_p95, th.blank_contrast, th.review_band);
    ensure((own - cal.f1).abs() < 1e-12, || format!("reported F1 {} but thresholds score {own}", cal.f1))?;
    Ok(format!("fixture verdicts exact; calibrated F1 {:.3} equals brute-force optimum", cal.f1))
}

fn early_stop_contract() -> Outcome {
    let record = run_epochs(200, 8, |epoch| {
        Ok(EpochRecord {
            epoch,
            train_loss: 1.0,
            train_accuracy: 0.5,
            validation_loss: 0.5 + 0.01 * epoch as f64,
            validation_accuracy: 0.5,
            train_samples: 0,
        })
    })
    .map_err(|e| e.to_string())?;
    ensure(record.stop_reason == StopReason::EarlyStop, || "did not stop early".into())?;
    let best = record.best_epoch().unwrap_or(0);
    let non_improving = record.stop_epoch - best;
    ensure(record.stop_epoch == 9 && non_improving == 8, || {
        format!("stopped at {} with {non_improving} non-improving epochs", record.stop_epoch)
    })?;

    // The same rule inside the real training loop: with an oversized
    // learning rate validation loss stalls, and training must stop at the
    // first epoch where the last 8 fail to beat everything before them.
    let mut config = RunConfig::reference(TrainMode::Scratch, Protocol::Kfold);
    config.input_size = 8;
    config.epochs = 60;
    config.steps_per_epoch = 2;
    config.train_batch = 4;
    config.validation_batch = 4;
    config.validation_steps = 1;
    config.learning_rate = 0.5;
    let images: Vec<ImageBuffer> = (0..8).map(|i| ImageBuffer::filled(8, 8, [(i * 30) as u8, 100, 50])).collect();
    let set = SampleSet::from_parts((0..8).map(|i| format!("s{i}")).collect(), images, (0..8).map(|i| i % 5).collect());
    let mut model = prepare_model(&config, 0).map_err(|e| e.to_string())?;
    let rec = train(&config, &mut model, &set, &set).map_err(|e| e.to_string())?;
    let losses: Vec<f64> = rec.epochs.iter().map(|e| e.validation_loss).collect();
    let trigger = |n: usize| n > 8 && {
        let best = losses[..n - 8].iter().copied().fold(f64::INFINITY, f64::min);
        losses[n - 8..n].iter().all(|&v| v >= best)
    };
    let first = (1..=losses.len()).find(|&n| trigger(n));
    match (rec.stop_reason, first) {
        (StopReason::EarlyStop, Some(n)) => ensure(n == rec.stop_epoch, || format!("stopped at {} but rule fires at {n}", rec.stop_epoch))?,
        (StopReason::Completed, None) => ensure(losses.len() == config.epochs, || "completed short".into())?,
        (reason, n) => return Err(format!("training loop {reason:?}, oracle trigger {n:?}")),
    }
    Ok(format!(
        "worsening sequence halts at epoch 9 after 8 non-improving epochs; training loop stopped at epoch {} ({:?})",
        rec.stop_epoch, rec.stop_reason
    ))
}

fn batch_arithmetic() -> Outcome {
    let mut config = RunConfig::reference(TrainMode::Scratch, Protocol::Kfold);
    config.input_size = 8;
    config.epochs = 1;
    ensure(config.steps_per_epoch == 80 && config.train_batch == 24 && config.test_batch == 45, || "defaults changed".into())?;
    let n = 250;
    let mut rng = SeededStream::new(3);
    let images: Vec<ImageBuffer> = (0..n)
        .map(|_| ImageBuffer::from_fn(8, 8, |_, _| [rng.below(256) as u8, rng.below(256) as u8, rng.below(256) as u8]))
        .collect();
    let set = SampleSet::from_parts((0..n).map(|i| format!("s{i}")).collect(), images, (0..n).map(|i| i % 5).collect());
    let mut model = prepare_model(&config, 1).map_err(|e| e.to_string())?;
    let rec = train(&config, &mut model, &set, &set).map_err(|e| e.to_string())?;
    let consumed = rec.epochs[0].train_samples;
    ensure(consumed == 1920, || format!("{consumed} training samples in one epoch"))?;

    let sizes = batch_sizes(n, 45);
    ensure(sizes == vec![45, 45, 45, 45, 45, 25], || format!("batch sizes {sizes:?}"))?;
    let r = evaluate(&model, &set, 45).map_err(|e| e.to_string())?;
    ensure(r.batches == 6 && r.samples == 250, || format!("{} batches, {} samples", r.batches, r.samples))?;
    // Oracle: one sample at a time.
    let mut loss = 0.0;
    let mut correct = 0;
    for i in 0..n {
        let single = SampleSet::from_parts(vec![set.ids[i].clone()], vec![set.images[i].clone()], vec![set.labels[i]]);
        let e = evaluate(&model, &single, 1).map_err(|e| e.to_string())?;
        loss += e.loss;
        correct += (e.accuracy == 1.0) as usize;
    }
    ensure((loss / n as f64 - r.loss).abs() < 1e-6, || format!("batched loss {} vs per-sample {}", r.loss, loss / n as f64))?;
    ensure(correct as f64 / n as f64 == r.accuracy, || "batched accuracy differs from per-sample".into())?;
    Ok("80 x 24 = 1920 samples per epoch; 250 test rows in 6 batches (last 25), each counted once".into())
}

fn end_to_end_smoke() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = generate_corpus(dir.path(), &SynthConfig::default()).map_err(|e| e.to_string())?;
    let patch_dir = dir.path().join("patches");
    patch_directory(&corpus.image_dir, &patch_dir, 100).map_err(|e| e.to_string())?;
    let mut manifest = forge_core::dataset::build_manifest(&patch_dir, &corpus.labels, None).map_err(|e| e.to_string())?;
    let report = filter_run(&mut manifest, &patch_dir, &FilterThresholds::default()).map_err(|e| e.to_string())?;
    let rejected = report.rows.iter().filter(|r| r.verdict != Verdict::Keep).count();
    let split = holdout_split(&manifest, SplitRatios::TRAIN_VALIDATION_TEST, 11, SplitOptions::default()).map_err(|e| e.to_string())?;
    let report = verify_split(&manifest, Assignment::Holdout(&split));
    ensure(report.is_ok(), || format!("{:?}", report.violations))?;
    let manifest = split.apply(&manifest);

    let mut config = RunConfig::reference(TrainMode::Scratch, Protocol::Kfold);
    config.epochs = 6;
    config.seed = 11;
    use forge_core::dataset::Split;
    let load = |s| SampleSet::load_split(&manifest, s, &patch_dir, config.input_size).map_err(|e| e.to_string());
    let (train_set, val_set, test_set) = (load(Split::Train)?, load(Split::Validation)?, load(Split::Test)?);
    let mut model = prepare_model(&config, 0).map_err(|e| e.to_string())?;
    let rec = train(&config, &mut model, &train_set, &val_set).map_err(|e| e.to_string())?;
    let test = evaluate(&model, &test_set, config.test_batch).map_err(|e| e.to_string())?;
    ensure(test.accuracy >= 0.80, || format!("test accuracy {:.3} after {} epochs", test.accuracy, rec.epochs.len()))?;
    Ok(format!(
        "{} patches ({rejected} screened out), {} epochs, test accuracy {:.1}% on {} patches",
        manifest.len(),
        rec.epochs.len(),
        100.0 * test.accuracy,
        test.samples
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("grid_law", grid_law),
        ("tables_consistency", tables_consistency),
        ("gradient_oracle", gradient_oracle),
        ("split_fold_properties", split_properties),
        ("filter_fixtures_and_calibration", filter_fixtures),
        ("early_stop_contract", early_stop_contract),
        ("batch_arithmetic", batch_arithmetic),
        ("end_to_end_smoke", end_to_end_smoke),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
