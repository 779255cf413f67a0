use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nli_consistency::datasets::write_benchmark;
use nli_consistency::synthetic::{benchmark_dataset, separable_corpus};
use nli_consistency::trainer::write_training_corpus;
use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nli-consistency"))
        .args(args)
        .env_remove("NLI_CONSISTENCY_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr is JSON")
}

fn council(extra: &[&str]) -> Output {
    let fixture = data("council_fixture.json");
    let doc = data("council_document.txt");
    let sum = data("council_summary.txt");
    let mut args = vec![
        "--fixture",
        fixture.to_str().unwrap(),
        "score",
        "--document",
        doc.to_str().unwrap(),
        "--summary",
        sum.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn score_prints_the_breakdown() {
    let v = stdout_json(&council(&[]));
    assert!((v["final"].as_f64().unwrap() - 0.67).abs() < 1e-6);
    assert_eq!(v["per_sentence"], serde_json::json!([0.98, 0.99, 0.04]));
    assert_eq!(v["support"], serde_json::json!([1, 2, 0]));
}

#[test]
fn score_operator_flags() {
    let v = stdout_json(&council(&["--scorer", "zs:max:max"]));
    assert_eq!(v["final"].as_f64().unwrap(), 0.99);
    let v = stdout_json(&council(&["--op2", "min"]));
    assert_eq!(v["final"].as_f64().unwrap(), 0.04);
}

#[test]
fn empty_summary_is_an_input_error() {
    let out = run(&["score", "--document-text", "A sentence.", "--summary-text", "   "]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "EmptyInput");
}

#[test]
fn paragraph_summaries_are_rejected() {
    let out = run(&[
        "--sum-granularity",
        "paragraph",
        "score",
        "--document-text",
        "One. Two.",
        "--summary-text",
        "One.",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "UnsupportedGranularity");
}

#[test]
fn fixture_miss_is_a_backend_error() {
    let fixture = data("council_fixture.json");
    let out = run(&[
        "--fixture",
        fixture.to_str().unwrap(),
        "score",
        "--document-text",
        "Something else entirely.",
        "--summary-text",
        "Not in the fixture.",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"], "FixtureMiss");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"op1": "max", "bins": 3}"#).unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "score", "--document-text", "A.", "--summary-text", "A."]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"op2": "min"}"#).unwrap();
    let v = stdout_json(&council(&["--config", cfg.to_str().unwrap()]));
    assert_eq!(v["final"].as_f64().unwrap(), 0.04);
    let v = stdout_json(&council(&["--config", cfg.to_str().unwrap(), "--op2", "max"]));
    assert_eq!(v["final"].as_f64().unwrap(), 0.99);
}

#[test]
fn every_command_help_lists_config_keys() {
    for cmd in ["score", "train", "ingest", "benchmark", "throughput"] {
        let out = run(&[cmd, "--help"]);
        assert!(out.status.success());
        let help = String::from_utf8(out.stdout).unwrap();
        for key in nli_consistency::config::CONFIG_KEYS {
            assert!(help.contains(key), "{cmd} --help misses {key}");
        }
    }
}

#[test]
fn ingest_standardizes_and_splits() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.jsonl");
    let lines: Vec<String> = (0..6)
        .map(|i| {
            serde_json::json!({"id": i, "document": "The sky is blue.", "summary": "The sky is blue.", "label": i % 2})
                .to_string()
        })
        .collect();
    std::fs::write(&raw, lines.join("\n")).unwrap();
    let out_path = dir.path().join("out.jsonl");
    let v = stdout_json(&run(&[
        "ingest",
        "--dataset",
        "passthrough",
        "--name",
        "toy",
        "--input",
        raw.to_str().unwrap(),
        "--output",
        out_path.to_str().unwrap(),
    ]));
    assert_eq!(v["stats"]["validation"], 3);
    assert_eq!(v["stats"]["test"], 3);
    assert_eq!(v["stats"]["positives"], 3);
    let written = nli_consistency::datasets::load_benchmark(&out_path).unwrap();
    assert!(written.iter().all(|s| s.dataset == "toy"));
}

#[test]
fn ingest_schema_drift_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.jsonl");
    std::fs::write(&raw, r#"{"id": 1, "document": "A.", "summary": "B.", "consistency": [5, 9]}"#).unwrap();
    let out_path = dir.path().join("out.jsonl");
    let out = run(&[
        "ingest",
        "--dataset",
        "summeval",
        "--input",
        raw.to_str().unwrap(),
        "--output",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_json(&out)["error"], "SchemaMismatch");
}

#[test]
fn degenerate_training_labels_are_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut records = separable_corpus(10, 3);
    for r in &mut records {
        r.label = 1;
    }
    let train = dir.path().join("train.jsonl");
    write_training_corpus(&train, &records).unwrap();
    let model = dir.path().join("model.json");
    let out = run(&[
        "train",
        "--train",
        train.to_str().unwrap(),
        "--valid",
        train.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn train_then_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    write_training_corpus(p("train.jsonl"), &separable_corpus(2000, 1)).unwrap();
    write_training_corpus(p("valid.jsonl"), &separable_corpus(500, 2)).unwrap();
    let summary = stdout_json(&run(&[
        "--seed",
        "5",
        "train",
        "--train",
        &p("train.jsonl"),
        "--valid",
        &p("valid.jsonl"),
        "--out",
        &p("model.json"),
    ]));
    let best = summary["best_epoch"].as_u64().unwrap() as usize;
    let best_ba = summary["history"][best - 1]["valid_balanced_accuracy"].as_f64().unwrap();
    assert!(best_ba >= 0.95, "{best_ba}");

    let mut samples = benchmark_dataset("alpha", 200, 0.5, 21);
    samples.extend(benchmark_dataset("beta", 120, 0.7, 22));
    write_benchmark(p("bench.jsonl"), &samples, false).unwrap();
    let conv = format!("conv:{}", p("model.json"));
    let args = [
        "benchmark",
        "--data",
        &p("bench.jsonl"),
        "--scorer",
        &conv,
        "--scorer",
        "mnli-doc",
        "--n-resamples",
        "1000",
        "--report",
        &p("report.json"),
        "--scores",
        &p("scores.json"),
    ];
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let board = String::from_utf8(out.stdout).unwrap();
    assert!(board.contains("Conv(h=50)") && board.contains("MNLI-doc"), "{board}");
    assert!(board.contains("alpha") && board.contains("Overall"));

    let report: Value = serde_json::from_str(&std::fs::read_to_string(p("report.json")).unwrap()).unwrap();
    let conv_report = &report["reports"][0];
    assert!(conv_report["overall"].as_f64().unwrap() >= 0.95);
    assert_eq!(report["reports"][1]["significance"].as_array().unwrap().len(), 8);

    // Rerunning reuses the stored scores and reproduces the report exactly.
    let first = std::fs::read(p("report.json")).unwrap();
    let again = run(&args);
    assert!(again.status.success());
    assert_eq!(std::fs::read(p("report.json")).unwrap(), first);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), board);
}

#[test]
fn throughput_reports_docs_per_minute() {
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("bench.jsonl");
    write_benchmark(&bench, &benchmark_dataset("t", 40, 0.5, 2), false).unwrap();
    let v = stdout_json(&run(&["throughput", "--data", bench.to_str().unwrap(), "--warmup-docs", "2"]));
    assert_eq!(v["throughput"]["docs"], 20);
    assert!(v["throughput"]["docs_per_min"].as_f64().unwrap() > 0.0);
}

#[test]
fn cache_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_nli-consistency"))
        .args(["score", "--document-text", "Cats purr. Dogs bark.", "--summary-text", "Dogs bark."])
        .env("NLI_CONSISTENCY_CACHE_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(stdout_json(&out)["final"], 1.0);
    let entries = std::fs::read_dir(dir.path().join("matrices")).unwrap().count();
    assert_eq!(entries, 1);
}
