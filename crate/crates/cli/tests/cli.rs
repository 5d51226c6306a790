use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn reno(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reno"))
        .args(args)
        .env("NVER_LOG_LEVEL", "error")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a small two-view corpus and returns (view0, view1, manifest, labels).
fn corpus(dir: &Path) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    let out = reno(&[
        "synth-data",
        "--classes",
        "3",
        "--per-class",
        "15",
        "--dims",
        "24,32",
        "--seed",
        "4",
        "--out",
        s(dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    (
        dir.join("view0.nveb"),
        dir.join("view1.nveb"),
        dir.join("manifest.csv"),
        dir.join("labels.txt"),
    )
}

fn train_args<'a>(embeddings: &'a str, manifest: &'a str, out: &'a str, model: &'a str) -> Vec<&'a str> {
    vec![
        "train",
        "--model",
        model,
        "--embeddings",
        embeddings,
        "--manifest",
        manifest,
        "--epochs",
        "2",
        "--seed",
        "3",
        "--out",
        out,
    ]
}

#[test]
fn synth_train_evaluate_report() {
    let dir = tempfile::tempdir().unwrap();
    let (v0, v1, manifest, labels) = corpus(dir.path());
    let embeddings = format!("{},{}", s(&v0), s(&v1));
    let report = dir.path().join("run/reno.json");

    let mut args = train_args(&embeddings, s(&manifest), s(&report), "reno");
    args.push("--save-models");
    let out = reno(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let folds = json["folds"].as_array().unwrap();
    assert_eq!(folds.len(), 5);
    let tested: u64 = folds
        .iter()
        .flat_map(|f| f["confusion"].as_array().unwrap())
        .flat_map(|row| row.as_array().unwrap())
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(tested, 45);
    for key in ["model", "train", "mean_accuracy", "std_accuracy", "mean_macro_f1", "std_macro_f1"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    assert!(dir.path().join("run/reno.folds.json").exists());

    let ckpt = dir.path().join("run/reno.fold0.ckpt");
    let metrics = dir.path().join("eval/metrics.json");
    let out = reno(&[
        "evaluate",
        "--checkpoint",
        s(&ckpt),
        "--embeddings",
        &embeddings,
        "--manifest",
        s(&manifest),
        "--out",
        s(&metrics),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("eval/metrics.confusion.csv").exists());

    let tables = dir.path().join("tables");
    let out = reno(&["report", s(&report), "--labels", s(&labels), "--out", s(&tables)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.lines().next().unwrap().contains("F1"));
    assert!(table.contains("mean") && table.contains("std"));
    let csv = std::fs::read_to_string(tables.join("reno.confusion.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "true\\predicted,class0,class1,class2");
    assert_eq!(csv.lines().count(), 4);
    for fold in 0..5 {
        assert!(tables.join(format!("reno.fold{fold}.confusion.csv")).exists());
    }
}

#[test]
fn identical_invocations_write_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (v0, v1, manifest, _) = corpus(dir.path());
    let embeddings = format!("{},{}", s(&v0), s(&v1));
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    assert_eq!(code(&reno(&train_args(&embeddings, s(&manifest), s(&a), "concat"))), 0);
    assert_eq!(code(&reno(&train_args(&embeddings, s(&manifest), s(&b), "concat"))), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn gradcheck_succeeds() {
    let out = reno(&["gradcheck", "--seed", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("reno end-to-end"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn fcn_with_two_views_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (v0, v1, manifest, _) = corpus(dir.path());
    let embeddings = format!("{},{}", s(&v0), s(&v1));
    let report = dir.path().join("fcn.json");
    let out = reno(&train_args(&embeddings, s(&manifest), s(&report), "fcn"));
    assert_eq!(code(&out), 1);
    assert!(!report.exists());
}

#[test]
fn missing_embedding_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, manifest, _) = corpus(dir.path());
    let missing = dir.path().join("nope.nveb");
    let out = reno(&train_args(s(&missing), s(&manifest), s(&dir.path().join("r.json")), "cnn"));
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.nveb"));
}

#[test]
fn corrupt_embedding_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (v0, _, manifest, _) = corpus(dir.path());
    let mut bytes = std::fs::read(&v0).unwrap();
    bytes[0] = b'X';
    std::fs::write(&v0, bytes).unwrap();
    let out = reno(&train_args(s(&v0), s(&manifest), s(&dir.path().join("r.json")), "cnn"));
    assert_eq!(code(&out), 2);
}

#[test]
fn argument_errors_exit_one() {
    assert_eq!(code(&reno(&["train", "--no-such-flag"])), 1);
    assert_eq!(code(&reno(&["frobnicate"])), 1);
    assert_eq!(code(&reno(&["--help"])), 0);
    assert_eq!(code(&reno(&["--version"])), 0);
    let out = Command::new(env!("CARGO_BIN_EXE_reno"))
        .args(["gradcheck"])
        .env("NVER_LOG_LEVEL", "chatty")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
}
