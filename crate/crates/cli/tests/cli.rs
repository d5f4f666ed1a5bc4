use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flipset"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().args(args).current_dir(dir).env("FLIPSET_LOG", "off").output().unwrap()
}

fn mini_corpus() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mini_sentiment.jsonl")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str = "name = \"small\"\n[data]\nkind = \"synthetic\"\nseed = 1\nn_train = 80\nn_test = 12\ndim = 3\nseparation = 2.0\nnoise_rate = 0.0\n";

#[test]
fn train_reports_metrics_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = mini_corpus();
    let data = corpus.to_str().unwrap();
    let first = run(dir.path(), &["train", "--data", data, "-o", "out"]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let text = stdout(&first);
    assert!(text.contains("accuracy") && text.contains("auc"), "{text}");
    let model_dir = dir.path().join("out/mini_sentiment/model");
    let manifest = std::fs::read(model_dir.join("model.json")).unwrap();
    let theta = std::fs::read(model_dir.join("theta.bin")).unwrap();
    assert!(model_dir.join("vocab.json").is_file());

    assert!(run(dir.path(), &["train", "--data", data, "-o", "out"]).status.success());
    assert_eq!(std::fs::read(model_dir.join("model.json")).unwrap(), manifest);
    assert_eq!(std::fs::read(model_dir.join("theta.bin")).unwrap(), theta);
}

#[test]
fn missing_dataset_exits_with_config_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["train", "--data", "missing.jsonl", "-o", "out"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
    let o = run(dir.path(), &["experiment", "--data", "missing.jsonl", "-o", "out"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn malformed_data_exits_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.jsonl"), "{\"text\": \"a b\", \"label\": 7, \"split\": \"train\"}\n").unwrap();
    let o = run(dir.path(), &["train", "--data", "bad.jsonl", "-o", "out"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.jsonl:1"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    let o = run(dir.path(), &["train", "-c", "run.toml", "--name", "renamed", "--lambda", "0.5", "-o", "out"]);
    assert!(o.status.success());
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/renamed/model/model.json")).unwrap()).unwrap();
    assert_eq!(manifest["hyper"]["lambda"], 0.5);
    let o = run(dir.path(), &["train", "-c", "run.toml", "--lambda=-1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flipset_prints_members_and_persists_the_result() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    assert!(run(dir.path(), &["train", "-c", "run.toml", "-o", "out"]).status.success());
    let o = run(dir.path(), &["flipset", "-c", "run.toml", "-o", "out", "--test-index", "0", "--algorithm", "greedy", "--verify"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("test point 0"), "{text}");
    let saved: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/small/flipsets/greedy-0.json")).unwrap()).unwrap();
    assert_eq!(saved["test_index"], 0);
    if !saved["members"].as_array().unwrap().is_empty() {
        assert!(text.contains("retrained p"));
    }

    let o = run(dir.path(), &["flipset", "--model", "out/small/model", "--test-index", "500"]);
    assert_eq!(o.status.code(), Some(3));
    let o = run(dir.path(), &["flipset", "--model", "nowhere", "--test-index", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn experiment_writes_every_report_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    let o = run(dir.path(), &["experiment", "-c", "run.toml", "-o", "out", "--threads", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    for key in ["found", "flipped", "mean k", "mean passes", "wall time"] {
        assert!(text.contains(key), "{key} missing from {text}");
    }
    let out = dir.path().join("out/small/experiment-iterative");
    for f in ["summary.json", "records.jsonl", "timing.json", "k_histogram.csv", "k_vs_confidence.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let records = std::fs::read_to_string(out.join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 12);

    // a changed config discards the old records
    let o = run(dir.path(), &["experiment", "-c", "run.toml", "-o", "out", "--max-test-points", "5"]);
    assert!(o.status.success());
    let records = std::fs::read_to_string(out.join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 5);
}

#[test]
fn calibrate_gates_on_the_floor() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    let pass = run(dir.path(), &["calibrate", "-c", "run.toml", "-o", "out", "--test-points", "3", "--floor=-1"]);
    assert_eq!(pass.status.code(), Some(0));
    assert!(stdout(&pass).contains("mean r"));
    assert!(dir.path().join("out/small/calibration.json").is_file());
    let fail = run(dir.path(), &["calibrate", "-c", "run.toml", "-o", "out", "--test-points", "3", "--floor", "1"]);
    assert_eq!(fail.status.code(), Some(1));
}

#[test]
fn attribution_writes_a_method_by_k_table() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    let o = run(
        dir.path(),
        &["attribution", "-c", "run.toml", "-o", "out", "--methods", "ip,random,euc", "--k-grid", "2,5", "--test-points", "4"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/small/attribution/attribution_sweep.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "method,k,mean_abs_delta");
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    let bad = run(dir.path(), &["attribution", "-c", "run.toml", "--methods", "nope"]);
    assert_eq!(bad.status.code(), Some(2));
}
