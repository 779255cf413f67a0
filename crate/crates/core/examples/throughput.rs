//! Throughput with a cold and a warm pair-matrix cache.
//!
//! The mock backend is given a fixed per-batch latency to stand in for a
//! model server. The first pass fills an on-disk cache, the second reuses it.

use std::sync::Arc;
use std::time::Duration;

use nli_consistency::harness::{measure_throughput, ThroughputReport, ZsScorer};
use nli_consistency::matrix::MatrixCache;
use nli_consistency::nli::{MockBackend, NliBackend};
use nli_consistency::synthetic::separable_corpus;

pub fn run_example() -> nli_consistency::Result<(ThroughputReport, ThroughputReport)> {
    let corpus: Vec<(String, String)> = separable_corpus(40, 5)
        .into_iter()
        .map(|r| (r.document, r.summary))
        .collect();
    let backend: Arc<dyn NliBackend> = Arc::new(MockBackend::new().with_latency(Duration::from_millis(20), 64));
    let dir = tempfile::tempdir().expect("temp dir");
    let mut scorer = ZsScorer::new(backend);
    scorer.cache = Some(MatrixCache::open(dir.path())?);

    let cold = measure_throughput(&scorer, &corpus, 0, 4)?;
    let warm = measure_throughput(&scorer, &corpus, 0, 4)?;
    println!(
        "{} docs, {:.1} sentences per document on average",
        cold.docs, cold.mean_doc_sentences
    );
    println!("cold cache: {:>9.1} docs/min", cold.docs_per_min);
    println!("warm cache: {:>9.1} docs/min", warm.docs_per_min);
    Ok((cold, warm))
}

fn main() -> nli_consistency::Result<()> {
    run_example().map(|_| ())
}
