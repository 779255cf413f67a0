//! Histogram features and the convolution scorer.
//!
//! Bins each summary column of the packaged example matrix into five bins,
//! then scores it with a hand-set kernel that rewards high entailment.

use std::path::Path;

use nli_consistency::aggregator::{bin_column, conv_score, ConvModel};
use nli_consistency::matrix::{matrix_for_texts, Category, CategorySet};
use nli_consistency::nli::FixtureBackend;
use nli_consistency::segmenter::Granularity;

pub struct ConvExample {
    pub histograms: Vec<Vec<f64>>,
    pub final_score: f64,
}

pub fn run_example() -> nli_consistency::Result<ConvExample> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let backend = FixtureBackend::load(data.join("council_fixture.json"))?;
    let document = std::fs::read_to_string(data.join("council_document.txt")).expect("packaged data");
    let summary = std::fs::read_to_string(data.join("council_summary.txt")).expect("packaged data");
    let mat = matrix_for_texts(&document, &summary, Granularity::Sentence, Granularity::Sentence, &backend, None)?;

    let h = 5;
    let mut histograms = Vec::new();
    for j in 0..mat.n() {
        let hist = bin_column(&mat.column(j, Category::E), h)?;
        println!("summary sentence {j}: entailment histogram {:?}", hist.counts);
        histograms.push(hist.counts);
    }

    // Raw counts, a kernel that only looks at the top bin.
    let mut model = ConvModel::zeros(h, CategorySet::ENTAILMENT, false);
    model.weights = vec![-1.0, -1.0, -1.0, -1.0, 3.0];
    model.bias = -1.0;
    let breakdown = conv_score(&mat, &model)?;
    println!("per-sentence {:?}", breakdown.per_sentence);
    println!("final {:.6}", breakdown.final_score);
    Ok(ConvExample {
        histograms,
        final_score: breakdown.final_score,
    })
}

fn main() -> nli_consistency::Result<()> {
    run_example().map(|_| ())
}
