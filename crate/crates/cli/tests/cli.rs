//! End-to-end runs of the `har` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL_CONFIG: &str = r#"{
  "network": {
    "epochs": 2,
    "blocks": [
      {"filters": 4, "kernel": 5, "pool": 2, "dropout": 0.5},
      {"filters": 4, "kernel": 5, "pool": 2, "dropout": 0.5}
    ]
  },
  "transfer": {"epochs": 5},
  "baseline": {"epochs": 50}
}"#;

fn har(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_har"))
        .args(args)
        .env("HAR_LOG", "error")
        .output()
        .expect("run har")
}

fn ok(args: &[&str]) -> String {
    let out = har(args);
    assert!(
        out.status.success(),
        "har {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let w = Workspace {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(w.path("small.json"), SMALL_CONFIG).unwrap();
        ok(&["synth", "--out", s(&w.path("syn"))]);
        w
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str) -> PathBuf {
        let out = self.path(out);
        ok(&[
            "train",
            "--data",
            s(&self.path("syn")),
            "--dataset",
            "synth",
            "--config",
            s(&self.path("small.json")),
            "--exclude",
            "s01",
            "--out",
            s(&out),
        ]);
        out
    }
}

/// Checkpoint bytes with every parameter's `frozen` byte cleared.
fn without_frozen_flags(bytes: &[u8]) -> Vec<u8> {
    let mut b = bytes.to_vec();
    let u32_at = |b: &[u8], p: usize| u32::from_le_bytes(b[p..p + 4].try_into().unwrap()) as usize;
    let mut pos = 8;
    pos += 4 + u32_at(&b, pos);
    let count = u32_at(&b, pos);
    pos += 4;
    for _ in 0..count {
        let name_len = u16::from_le_bytes([b[pos], b[pos + 1]]) as usize;
        pos += 2 + name_len;
        b[pos] = 0;
        pos += 1;
        let rank = b[pos] as usize;
        pos += 1;
        let n: usize = (0..rank).map(|i| u32_at(&b, pos + 4 * i)).product();
        pos += 4 * rank + 4 * n;
    }
    assert_eq!(pos, b.len());
    b
}

fn dir_listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn synth_writes_one_file_per_subject_and_is_reproducible() {
    let w = Workspace::new();
    let names: Vec<String> = dir_listing(&w.path("syn")).into_iter().map(|(n, _)| n).collect();
    assert_eq!(
        names,
        [
            "config.lock.json",
            "manifest.json",
            "s01.csv",
            "s02.csv",
            "s03.csv",
            "s04.csv",
            "s05.csv",
            "s06.csv"
        ]
    );
    ok(&["synth", "--out", s(&w.path("again"))]);
    assert_eq!(dir_listing(&w.path("syn")), dir_listing(&w.path("again")));
}

#[test]
fn single_subject_synth_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = har(&["synth", "--out", s(&dir.path().join("x")), "--subjects", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("at least 2"), "{}", stderr(&out));
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(har(&["train"]).status.code(), Some(2));
    assert_eq!(har(&["nonsense"]).status.code(), Some(2));
    assert_eq!(har(&["--help"]).status.code(), Some(0));
}

#[test]
fn unknown_config_key_is_named() {
    let w = Workspace::new();
    fs::write(w.path("bad.json"), r#"{"network": {"epoch": 2}}"#).unwrap();
    let out = har(&[
        "train",
        "--data",
        s(&w.path("syn")),
        "--dataset",
        "synth",
        "--config",
        s(&w.path("bad.json")),
        "--out",
        s(&w.path("m.harm")),
    ]);
    assert_eq!(out.status.code(), Some(5));
    assert!(stderr(&out).contains("`epoch`"), "{}", stderr(&out));
}

#[test]
fn missing_inputs_are_io_errors() {
    let w = Workspace::new();
    let out = har(&[
        "evaluate",
        "--data",
        s(&w.path("syn")),
        "--dataset",
        "synth",
        "--model",
        s(&w.path("nope.harm")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let out = har(&[
        "train",
        "--data",
        s(&w.path("nope")),
        "--dataset",
        "synth",
        "--out",
        s(&w.path("m.harm")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn corrupt_checkpoint_is_a_format_error() {
    let w = Workspace::new();
    fs::write(w.path("bad.harm"), b"garbage").unwrap();
    let out = har(&[
        "evaluate",
        "--data",
        s(&w.path("syn")),
        "--dataset",
        "synth",
        "--model",
        s(&w.path("bad.harm")),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("magic"), "{}", stderr(&out));
}

#[test]
fn train_writes_checkpoint_log_and_lock() {
    let w = Workspace::new();
    let model = w.train("m/source.harm");
    assert!(model.exists());
    let log: serde_json::Value =
        serde_json::from_slice(&fs::read(w.path("m/source.log.json")).unwrap()).unwrap();
    assert_eq!(log["epoch_losses"].as_array().unwrap().len(), 2);
    let initial = log["initial_loss"].as_f64().unwrap();
    assert!((initial - 4f64.ln()).abs() < 1e-6, "{initial}");

    let lock: serde_json::Value =
        serde_json::from_slice(&fs::read(w.path("m/config.lock.json")).unwrap()).unwrap();
    assert_eq!(lock["network"]["epochs"], 2);
    assert_eq!(lock["network"]["window"], 64);
    assert_eq!(lock["network"]["classes"], 4);
    assert_eq!(lock["exclude"], "s01");

    let first = fs::read(&model).unwrap();
    w.train("m/again.harm");
    assert_eq!(first, fs::read(w.path("m/again.harm")).unwrap());
}

#[test]
fn default_network_starts_at_uniform_loss() {
    let w = Workspace::new();
    fs::write(w.path("one.json"), r#"{"network": {"epochs": 1}}"#).unwrap();
    let model = w.path("default.harm");
    ok(&[
        "train",
        "--data",
        s(&w.path("syn")),
        "--dataset",
        "synth",
        "--config",
        s(&w.path("one.json")),
        "--out",
        s(&model),
    ]);
    let log: serde_json::Value =
        serde_json::from_slice(&fs::read(w.path("default.log.json")).unwrap()).unwrap();
    let initial = log["initial_loss"].as_f64().unwrap();
    assert!((initial - 4f64.ln()).abs() < 1e-6, "{initial}");
    assert_eq!(log["epoch_losses"].as_array().unwrap().len(), 1);
    ok(&[
        "evaluate",
        "--data",
        s(&w.path("syn")),
        "--dataset",
        "synth",
        "--model",
        s(&model),
    ]);
}

#[test]
fn zero_epoch_transfer_only_flips_frozen_flags() {
    let w = Workspace::new();
    let model = w.train("source.harm");
    let out = w.path("tuned.harm");
    ok(&[
        "transfer",
        "--data",
        s(&w.path("syn")),
        "--dataset",
        "synth",
        "--model",
        s(&model),
        "--subject",
        "s01",
        "--epochs",
        "0",
        "--out",
        s(&out),
    ]);
    let a = fs::read(&model).unwrap();
    let b = fs::read(&out).unwrap();
    assert_ne!(a, b);
    assert_eq!(without_frozen_flags(&a), without_frozen_flags(&b));
}

#[test]
fn transfer_reports_three_instances_per_activity() {
    let w = Workspace::new();
    let model = w.train("source.harm");
    let line = ok(&[
        "transfer",
        "--data",
        s(&w.path("syn")),
        "--dataset",
        "synth",
        "--model",
        s(&model),
        "--subject",
        "s02",
        "--k",
        "3",
        "--config",
        s(&w.path("small.json")),
        "--out",
        s(&w.path("t.harm")),
    ]);
    assert!(line.contains("12 transfer instances"), "{line}");
    assert!(line.contains("28 holdout"), "{line}");
    let lock: serde_json::Value =
        serde_json::from_slice(&fs::read(w.path("config.lock.json")).unwrap()).unwrap();
    assert_eq!(lock["transfer"]["k"], 3);
    assert_eq!(lock["transfer"]["epochs"], 5);
}

#[test]
fn transfer_to_unknown_subject_lists_ids() {
    let w = Workspace::new();
    let model = w.train("source.harm");
    let out = har(&[
        "transfer",
        "--data",
        s(&w.path("syn")),
        "--dataset",
        "synth",
        "--model",
        s(&model),
        "--subject",
        "zz",
        "--out",
        s(&w.path("t.harm")),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(
        stderr(&out).contains("s01, s02, s03, s04, s05, s06"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn transfer_needs_k_segments_per_class() {
    let w = Workspace::new();
    let model = w.train("source.harm");
    let out = har(&[
        "transfer",
        "--data",
        s(&w.path("syn")),
        "--dataset",
        "synth",
        "--model",
        s(&model),
        "--subject",
        "s01",
        "--k",
        "10",
        "--out",
        s(&w.path("t.harm")),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn loso_rows_and_parallel_determinism() {
    let w = Workspace::new();
    let run = |name: &str, parallel: &str| {
        let report = w.path(name).join("report.csv");
        ok(&[
            "loso",
            "--data",
            s(&w.path("syn")),
            "--dataset",
            "synth",
            "--config",
            s(&w.path("small.json")),
            "--variants",
            "trc,frozen_source,lr_baseline",
            "--seeds",
            "5",
            "--report",
            s(&report),
            "--parallel",
            parallel,
        ]);
        report
    };
    let serial = run("serial", "1");
    let parallel = run("parallel", "4");
    let csv = fs::read_to_string(&serial).unwrap();
    assert_eq!(csv, fs::read_to_string(&parallel).unwrap());
    assert_eq!(
        fs::read(serial.with_extension("md")).unwrap(),
        fs::read(parallel.with_extension("md")).unwrap()
    );
    assert_eq!(csv.lines().count(), 1 + 6 * 3 * 5);

    let lock: serde_json::Value =
        serde_json::from_slice(&fs::read(w.path("serial/config.lock.json")).unwrap()).unwrap();
    assert_eq!(lock["config"]["seeds"], serde_json::json!([0, 1, 2, 3, 4]));
    assert_eq!(lock["plan"]["network"]["epochs"], 2);
    assert!(lock["plan"].get("parallelism").is_none());

    let md = w.path("summary.md");
    ok(&["report", "--input", s(&serial), "--out", s(&md)]);
    assert_eq!(
        fs::read(&md).unwrap(),
        fs::read(serial.with_extension("md")).unwrap()
    );
}

#[test]
fn loso_rejects_unknown_variant() {
    let w = Workspace::new();
    let out = har(&[
        "loso",
        "--data",
        s(&w.path("syn")),
        "--dataset",
        "synth",
        "--variants",
        "trc,magic",
        "--report",
        s(&w.path("r.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("magic"), "{}", stderr(&out));
}

#[test]
fn evaluate_scores_a_subject() {
    let w = Workspace::new();
    let model = w.train("source.harm");
    let line = ok(&[
        "evaluate",
        "--data",
        s(&w.path("syn")),
        "--dataset",
        "synth",
        "--model",
        s(&model),
        "--subject",
        "s03",
    ]);
    assert!(line.starts_with("evaluate: 40 segments, accuracy "), "{line}");
}
