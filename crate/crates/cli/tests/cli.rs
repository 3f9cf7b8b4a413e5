use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;
use tempfile::TempDir;

fn forge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(args)
        .current_dir(dir)
        .env_remove("FORGE_SEED")
        .output()
        .expect("spawn forge")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = forge(dir, args);
    assert!(
        out.status.success(),
        "forge {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// The single JSON error line on stderr.
fn error_line(out: &Output) -> Value {
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {stderr}");
    serde_json::from_str(lines[0]).unwrap()
}

/// Synthetic corpus cut into 100 px patches and filtered.
fn prepared() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--output", "corpus"]);
    ok(
        d,
        &["patch", "--input", "corpus/images", "--labels", "corpus/labels.csv", "--output", "patches", "--patch-size", "100"],
    );
    ok(d, &["filter", "--manifest", "patches/manifest.csv"]);
    dir
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

#[test]
fn ratios_must_sum_to_100() {
    let dir = prepared();
    let out = forge(dir.path(), &["split", "--manifest", "patches/manifest.csv", "--ratios", "76.5,13.5,9", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let line = error_line(&out);
    assert_eq!(line["command"], "split");
    assert_eq!(line["kind"], "validation");
    assert!(line["message"].as_str().unwrap().contains("ratios must sum to 100"));
    assert!(!dir.path().join("patches/manifest.split.csv").exists());
}

#[test]
fn exit_codes_for_usage_io_and_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = forge(d, &["split", "--manifest", "missing.csv", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["kind"], "io");

    let out = forge(d, &["split", "--manifest", "missing.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out)["message"].as_str().unwrap().contains("--seed"));

    fs::write(d.join("bad.toml"), "epochs = 0\n").unwrap();
    fs::write(d.join("split.csv"), "patch_id,source_image,class,verdict,split,fold\n").unwrap();
    let out = forge(d, &["train", "--config", "bad.toml", "--split", "split.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["command"], "train");

    fs::write(d.join("typo.toml"), "epochz = 3\n").unwrap();
    let out = forge(d, &["train", "--config", "typo.toml", "--split", "split.csv"]);
    assert_eq!(out.status.code(), Some(1));

    let out = forge(d, &["--version"]);
    assert!(out.status.success());
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = prepared();
    let run = |seed_arg: Option<&str>, env: Option<&str>, output: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_forge"));
        cmd.current_dir(dir.path())
            .args(["split", "--manifest", "patches/manifest.csv", "--output", output])
            .env_remove("FORGE_SEED")
            .stdout(Stdio::null());
        if let Some(s) = seed_arg {
            cmd.args(["--seed", s]);
        }
        if let Some(e) = env {
            cmd.env("FORGE_SEED", e);
        }
        assert!(cmd.status().unwrap().success());
        read(dir.path().join(output))
    };
    assert_eq!(run(Some("42"), None, "a.csv"), run(None, Some("42"), "b.csv"));
    assert_ne!(run(Some("42"), None, "c.csv"), run(Some("43"), None, "d.csv"));
}

#[test]
fn full_pipeline_on_synthetic_corpus() {
    let dir = prepared();
    let d = dir.path();
    ok(d, &["split", "--manifest", "patches/manifest.csv", "--ratios", "76.5,13.5,10", "--seed", "7"]);
    fs::write(d.join("short.toml"), "epochs = 2\nsteps_per_epoch = 10\nvalidation_steps = 2\n").unwrap();
    let stdout = ok(d, &["train", "--config", "short.toml", "--split", "patches/manifest.split.csv", "--seed", "7"]);
    assert!(stdout.contains("test accuracy"), "{stdout}");
    let run: Value = serde_json::from_slice(&read(d.join("patches/manifest.split.run/run.json"))).unwrap();
    assert_eq!(run["record"]["epochs"].as_array().unwrap().len(), 2);
    assert_eq!(run["test"]["samples"], 63);

    // Transfer from the checkpoint just written.
    fs::write(
        d.join("transfer.toml"),
        "mode = \"transfer\"\nepochs = 1\nsteps_per_epoch = 4\nvalidation_steps = 1\npretrained = \"patches/manifest.split.run/model.ckpt\"\n",
    )
    .unwrap();
    ok(d, &["kfold", "--manifest", "patches/manifest.csv", "--k", "3", "--seed", "7"]);
    let stdout = ok(d, &["kfold-run", "--config", "transfer.toml", "--plan", "patches/folds", "--seed", "7"]);
    assert!(stdout.contains("MicroCNN transfer: mean"), "{stdout}");
    let curves = fs::read_to_string(d.join("patches/folds/results/fold_3.curves.csv")).unwrap();
    assert!(curves.starts_with("epoch,train_loss,train_acc,val_loss,val_acc,best\n"));
    let stdout = ok(d, &["report", "--results", "patches/folds/results", "--published"]);
    assert!(stdout.contains("published VGG16 transfer: mean 85.040%, std 1.861%"), "{stdout}");
    assert!(d.join("patches/folds/results/comparison.md").exists());
}

const VGG16_TRANSFER_FOLDS: [(f64, f64); 10] = [
    (0.604, 84.799),
    (0.674, 82.400),
    (0.447, 88.800),
    (0.523, 85.600),
    (0.68, 83.999),
    (0.573, 83.200),
    (0.498, 86.799),
    (0.76, 84.399),
    (0.748, 83.600),
    (0.44, 86.799),
];

#[test]
fn external_backend_results_are_reported() {
    let dir = prepared();
    let d = dir.path();
    ok(d, &["kfold", "--manifest", "patches/manifest.csv", "--k", "10", "--seed", "4"]);

    let mut results = String::from("fold,loss,accuracy\n");
    for (i, (loss, acc)) in VGG16_TRANSFER_FOLDS.iter().enumerate() {
        results.push_str(&format!("{i},{loss},{}\n", acc / 100.0));
    }
    fs::write(d.join("results.template"), results).unwrap();
    // The stub checks the job layout before answering.
    fs::write(
        d.join("stub.sh"),
        "set -e\njob=\"$1\"\ntest -f \"$job/config\"\nfor i in 0 1 2 3 4 5 6 7 8 9; do test -s \"$job/fold_$i/train.csv\"; done\ncp results.template \"$job/results.csv\"\n",
    )
    .unwrap();
    fs::write(d.join("transfer.toml"), "mode = \"transfer\"\npretrained = \"backbone.ckpt\"\n").unwrap();

    let stdout = ok(
        d,
        &["kfold-run", "--config", "transfer.toml", "--plan", "patches/folds", "--backend", "sh stub.sh", "--model", "VGG16"],
    );
    assert!(stdout.contains("VGG16 transfer: mean 85.040%, std 1.861%"), "{stdout}");

    let train_csv = fs::read_to_string(d.join("patches/folds/results/job/fold_0/train.csv")).unwrap();
    assert!(train_csv.starts_with("patch_id,path,class\n"));

    let stdout = ok(d, &["report", "--results", "patches/folds/results"]);
    assert!(stdout.contains("VGG16 transfer: mean 85.040%, std 1.861%"), "{stdout}");
    let table = fs::read_to_string(d.join("patches/folds/results/VGG16.transfer.md")).unwrap();
    assert!(table.contains("| Average Accuracy | | 85.040% |"));
    assert!(table.contains("| Standard Deviation | | 1.861% |"));
}

#[test]
fn failing_backend_exits_2() {
    let dir = prepared();
    let d = dir.path();
    ok(d, &["kfold", "--manifest", "patches/manifest.csv", "--k", "10", "--seed", "4"]);
    fs::write(d.join("s.toml"), "").unwrap();
    let out = forge(d, &["kfold-run", "--config", "s.toml", "--plan", "patches/folds", "--backend", "false"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["command"], "kfold-run");

    let out = forge(
        d,
        &["kfold-run", "--config", "s.toml", "--plan", "patches/folds", "--backend", "sh -c 'echo fold > \"$0/results.csv\"'"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let a = prepared();
    let b = prepared();
    let quick = "epochs = 2\nsteps_per_epoch = 4\nvalidation_steps = 1\n";
    for dir in [&a, &b] {
        let d = dir.path();
        ok(d, &["split", "--manifest", "patches/manifest.csv", "--seed", "9", "--group-by-source"]);
        ok(d, &["kfold", "--manifest", "patches/manifest.csv", "--k", "5", "--seed", "9"]);
        fs::write(d.join("quick.toml"), quick).unwrap();
        ok(d, &["train", "--config", "quick.toml", "--split", "patches/manifest.split.csv", "--seed", "2"]);
    }
    let files: Vec<PathBuf> = [
        "corpus/labels.csv",
        "corpus/images/bash_000.png",
        "patches/bash_000_r1_c2.png",
        "patches/manifest.csv",
        "patches/manifest.filter.csv",
        "patches/manifest.split.csv",
        "patches/folds/fold_3.csv",
        "patches/manifest.split.run/model.ckpt",
        "patches/manifest.split.run/curves.csv",
        "patches/manifest.split.run/run.json",
    ]
    .iter()
    .map(PathBuf::from)
    .collect();
    for f in files {
        assert_eq!(read(a.path().join(&f)), read(b.path().join(&f)), "{}", f.display());
    }
}

#[test]
fn filter_calibration_from_labels() {
    let dir = prepared();
    let d = dir.path();
    // Label every patch by whether the default filter kept it.
    let report = fs::read_to_string(d.join("patches/manifest.filter.csv")).unwrap();
    let mut labeled = String::from("patch_id,label\n");
    for line in report.lines().skip(1) {
        let mut cols = line.split(',');
        let id = cols.next().unwrap();
        let verdict = cols.next().unwrap();
        labeled.push_str(&format!("{id},{}\n", if verdict == "keep" { "keep" } else { "reject" }));
    }
    fs::write(d.join("labels.csv"), labeled).unwrap();
    let stdout = ok(d, &["filter", "--manifest", "patches/manifest.csv", "--calibrate", "labels.csv"]);
    assert!(stdout.contains("F1 1.000"), "{stdout}");
    let thresholds = fs::read_to_string(d.join("patches/manifest.thresholds.toml")).unwrap();
    assert!(thresholds.contains("dark_mean"));

    fs::write(d.join("bad.toml"), "dark_mean = 0.01\nreview_band = 0.04\n").unwrap();
    let out = forge(d, &["filter", "--manifest", "patches/manifest.csv", "--thresholds", "bad.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out)["message"].as_str().unwrap().contains("review_band"));
}

fn http_get(addr: &str, path: &str) -> String {
    let mut stream = TcpStream::connect(addr).unwrap();
    write!(stream, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    response
}

fn http_post_json(addr: &str, path: &str, body: &str) -> String {
    let mut stream = TcpStream::connect(addr).unwrap();
    write!(
        stream,
        "POST {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    response
}

#[test]
fn review_session_persists_on_interrupt() {
    let dir = prepared();
    let d = dir.path();
    let mut child = Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(["review", "--manifest", "patches/manifest.csv", "--port", "0"])
        .current_dir(d)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().rsplit("http://").next().unwrap().to_string();

    let progress = http_get(&addr, "/api/progress");
    assert!(progress.starts_with("HTTP/1.1 200"), "{progress}");
    assert!(progress.contains("\"pending\":10"), "{progress}");
    let queue = http_get(&addr, "/api/queue?limit=1");
    let body = queue.split("\r\n\r\n").nth(1).unwrap();
    let items: Value = serde_json::from_str(body).unwrap();
    let id = items[0]["patch_id"].as_str().unwrap().to_string();
    let resp = http_post_json(&addr, "/api/verdict", &format!("{{\"patch_id\":\"{id}\",\"verdict\":\"keep\"}}"));
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");

    let status = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(status.success());
    assert!(child.wait().unwrap().success());
    assert!(!d.join("patches/manifest.csv.wal").exists());
    let manifest = fs::read_to_string(d.join("patches/manifest.csv")).unwrap();
    assert!(manifest.lines().any(|l| l.starts_with(&format!("{id},")) && l.contains("manual_keep")));
}
