use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cream_core::eval::PredictionSet;
use cream_core::pairing::pairs_to_jsonl;
use cream_core::synthetic::{balanced_pairs, random_corpus};
use serde_json::Value;

fn core_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

/// Runs `cream` in `dir` with an isolated environment.
fn cream(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cream"));
    cmd.current_dir(dir).args(args);
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("CREAM_")) {
        cmd.env_remove(k);
    }
    cmd.output().expect("cream runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn runs(dir: &Path) -> Vec<Value> {
    std::fs::read_to_string(dir.join("cream-data/runs.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

const STUB_CONFIG: &str = r#"
explainer = "stub"
[providers.stub]
provider_id = "stub"
model_id = "echo"
endpoint = "stub"
[train]
epochs = 5
"#;

#[test]
fn unknown_subcommand_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = cream(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage:"));
}

#[test]
fn build_reproduces_the_golden_pairs_file_and_logs_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let input = core_fixture("six_tweets.jsonl");
    let stdout = ok(&cream(dir.path(), &["cred", "build", "--input", input.to_str().unwrap(), "--out-dir", "out"]));
    assert!(stdout.contains("Business & Entrepreneurs"));
    assert_eq!(
        std::fs::read(dir.path().join("out/pairs.jsonl")).unwrap(),
        std::fs::read(core_fixture("six_tweets.pairs.jsonl")).unwrap()
    );
    for f in ["corpus.jsonl", "train.jsonl", "valid.jsonl", "stats.json", "stats.txt", "ingest_report.json"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let lines = runs(dir.path());
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["status"], "running");
    assert_eq!(lines[1]["status"], "succeeded");
    assert_eq!(lines[1]["kind"], "build");
    assert_eq!(lines[1]["outputs"].as_array().unwrap().len(), 7);
}

#[test]
fn missing_input_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cream(dir.path(), &["cred", "build", "--input", "nope.jsonl", "--out-dir", "out"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(runs(dir.path()).last().unwrap()["status"], "failed");
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "explainer = ").unwrap();
    let out = cream(dir.path(), &["--config", "bad.toml", "ggea", "assess", "--t1", "a", "--t2", "b"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn eval_reports_the_constant_predictor_anchor() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = balanced_pairs(50);
    std::fs::write(dir.path().join("pairs.jsonl"), pairs_to_jsonl(&pairs)).unwrap();
    let records = PredictionSet::constant("always-t1", &pairs, true).to_records();
    std::fs::write(dir.path().join("preds.jsonl"), cream_core::jsonl::to_bytes(&records).unwrap()).unwrap();
    let stdout = ok(&cream(
        dir.path(),
        &["ggea", "eval", "--pairs", "pairs.jsonl", "--predictions", "preds.jsonl", "--out-dir", "eval"],
    ));
    assert!(stdout.contains("50.0%") && stdout.contains("66.7%"), "{stdout}");
    let report: Value = serde_json::from_slice(&std::fs::read(dir.path().join("eval/always-t1.report.json")).unwrap()).unwrap();
    assert_eq!(report["overall"]["accuracy"], 0.5);
}

#[test]
fn eval_with_incomplete_coverage_exits_with_the_eval_code() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = balanced_pairs(5);
    std::fs::write(dir.path().join("pairs.jsonl"), pairs_to_jsonl(&pairs)).unwrap();
    let records = PredictionSet::constant("short", &pairs[1..], true).to_records();
    std::fs::write(dir.path().join("preds.jsonl"), cream_core::jsonl::to_bytes(&records).unwrap()).unwrap();
    let out = cream(dir.path(), &["ggea", "eval", "--pairs", "pairs.jsonl", "--predictions", "preds.jsonl", "--out-dir", "eval"]);
    assert_eq!(out.status.code(), Some(7));
}

#[test]
fn full_pipeline_with_a_stub_explainer() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cream.toml"), STUB_CONFIG).unwrap();
    let corpus = random_corpus(200, 11);
    std::fs::write(d.join("corpus.jsonl"), cream_core::jsonl::to_bytes(&corpus.to_records()).unwrap()).unwrap();
    let c = ["--config", "cream.toml"];
    let with = |rest: &[&str]| -> Vec<String> { c.iter().chain(rest).map(|s| s.to_string()).collect() };
    let run = |rest: &[&str]| {
        let args = with(rest);
        cream(d, &args.iter().map(String::as_str).collect::<Vec<_>>())
    };

    ok(&run(&["cred", "build", "--input", "corpus.jsonl", "--out-dir", "data", "--split-date", "2021-04-01"]));
    ok(&run(&["ggea", "explain", "--pairs", "data/train.jsonl", "data/valid.jsonl", "--out", "expl.jsonl"]));
    let explanations = std::fs::read_to_string(d.join("expl.jsonl")).unwrap();
    assert!(!explanations.is_empty());

    let stdout = ok(&run(&["ggea", "train", "--pairs", "data/train.jsonl", "--explanations", "expl.jsonl"]));
    assert!(stdout.contains("training accuracy"), "{stdout}");
    assert!(d.join("cream-data/model.bin").exists());
    assert!(d.join("cream-data/model.bin.trainlog.json").exists());

    ok(&run(&["ggea", "predict", "--pairs", "data/valid.jsonl", "--explanations", "expl.jsonl", "--out", "preds.jsonl"]));
    let constant = PredictionSet::constant(
        "always-t1",
        &cream_core::pairing::read_pairs(&d.join("data/valid.jsonl"), cream_core::corpus::US_EASTERN).unwrap(),
        true,
    );
    std::fs::write(d.join("const.jsonl"), cream_core::jsonl::to_bytes(&constant.to_records()).unwrap()).unwrap();
    let stdout = ok(&run(&[
        "ggea", "eval", "--pairs", "data/valid.jsonl", "--predictions", "preds.jsonl", "const.jsonl", "--out-dir", "eval",
        "--baseline", "always-t1", "--iterations", "2000",
    ]));
    assert!(stdout.contains("linear-pair_plus_explanations vs always-t1: p = "), "{stdout}");
    assert!(d.join("eval/summary.txt").exists());

    let assess = ok(&run(&["ggea", "assess", "--t1", "jobs jobs jobs", "--t2", "roads"]));
    let body: Value = serde_json::from_str(&assess).unwrap();
    assert!(body["p_t1"].as_f64().unwrap() > 0.0);

    let kinds: Vec<String> = runs(d)
        .iter()
        .filter(|r| r["status"] == "succeeded")
        .map(|r| r["kind"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(kinds, ["build", "explain", "train", "predict", "eval", "assess"]);
}

#[test]
fn predict_without_a_model_exits_with_the_model_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("pairs.jsonl"), pairs_to_jsonl(&balanced_pairs(2))).unwrap();
    let out = cream(dir.path(), &["ggea", "predict", "--pairs", "pairs.jsonl", "--out", "p.jsonl"]);
    assert_eq!(out.status.code(), Some(6));
}

#[test]
fn train_without_recorded_explanations_is_an_upstream_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("pairs.jsonl"), pairs_to_jsonl(&balanced_pairs(2))).unwrap();
    let out = cream(dir.path(), &["ggea", "train", "--pairs", "pairs.jsonl"]);
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn a_held_train_lock_makes_train_busy() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("pairs.jsonl"), pairs_to_jsonl(&balanced_pairs(2))).unwrap();
    std::fs::create_dir_all(dir.path().join("cream-data")).unwrap();
    std::fs::write(dir.path().join("cream-data/runs.jsonl.train.lock"), "other-run").unwrap();
    let out = cream(dir.path(), &["--assembly-mode", "PAIR_ONLY", "ggea", "train", "--pairs", "pairs.jsonl"]);
    assert_eq!(out.status.code(), Some(8));
    assert!(String::from_utf8_lossy(&out.stderr).contains("other-run"));
}

#[test]
fn env_overrides_apply_below_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("pairs.jsonl"), pairs_to_jsonl(&balanced_pairs(3))).unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cream"));
    let out = cmd
        .current_dir(dir.path())
        .env("CREAM_ASSEMBLY_MODE", "PAIR_ONLY")
        .env("CREAM_MODEL_PATH", "env-model.bin")
        .args(["ggea", "train", "--pairs", "pairs.jsonl", "--epochs", "1"])
        .output()
        .unwrap();
    ok(&out);
    assert!(dir.path().join("env-model.bin").exists());
}
