//! Standardizing raw annotation files into benchmark JSONL.
//!
//! Writes small raw files in three different annotation schemas, ingests
//! them, and prints split sizes, positive rates and annotator agreement.

use std::fs;

use nli_consistency::datasets::{
    annotation_agreement, dataset_stats, ingest, load_benchmark, write_benchmark, BenchmarkSample, DatasetSpec,
    MappingOptions, MappingRule,
};
use serde_json::{json, Value};

fn write_jsonl(path: &std::path::Path, records: &[Value]) {
    let body: Vec<String> = records.iter().map(Value::to_string).collect();
    fs::write(path, body.join("\n") + "\n").expect("temp dir is writable");
}

pub fn run_example() -> nli_consistency::Result<Vec<BenchmarkSample>> {
    let dir = tempfile::tempdir().expect("temp dir");
    let doc = "The plant opened in 2019. It employs 300 people.";
    let raw: Vec<(MappingRule, Vec<Value>)> = vec![
        (
            MappingRule::SummEval,
            (0..6)
                .map(|i| {
                    let scores = if i % 3 == 0 { json!([5, 4, 5]) } else { json!([5, 5, 5]) };
                    json!({"id": i, "document": doc, "summary": "The plant opened in 2019.", "consistency": scores})
                })
                .collect(),
        ),
        (
            MappingRule::XSumFaith,
            (0..6)
                .map(|i| {
                    let h = if i % 2 == 0 { json!([]) } else { json!(["extrinsic"]) };
                    json!({"id": i, "document": doc, "summary": "It employs 300 people.", "hallucinations": h})
                })
                .collect(),
        ),
        (
            MappingRule::Frank,
            (0..6)
                .map(|i| {
                    let votes = if i < 3 { json!([[], [], ["EntE"]]) } else { json!([["OutE"], [], ["CircE"]]) };
                    let split = if i % 2 == 0 { "valid" } else { "test" };
                    json!({"id": i, "document": doc, "summary": "The plant closed.", "split": split, "annotator_errors": votes})
                })
                .collect(),
        ),
    ];

    let opts = MappingOptions::default();
    let mut all = Vec::new();
    for (rule, records) in raw {
        let path = dir.path().join(format!("{rule}.jsonl"));
        write_jsonl(&path, &records);
        let samples = ingest(&DatasetSpec::builtin(rule), &path, &opts)?;
        let stats = dataset_stats(&samples)?;
        let kappa = annotation_agreement(rule, &samples)?;
        println!(
            "{rule:<10} validation {} test {} positive {:.1}% kappa {}",
            stats.validation,
            stats.test,
            stats.percent_positive,
            kappa.map_or("-".to_string(), |k| format!("{k:.3}"))
        );
        all.extend(samples);
    }

    let out = dir.path().join("benchmark.jsonl");
    write_benchmark(&out, &all, false)?;
    let reloaded = load_benchmark(&out)?;
    println!("{} samples written to canonical JSONL", reloaded.len());
    Ok(reloaded)
}

fn main() -> nli_consistency::Result<()> {
    run_example().map(|_| ())
}
