//! Zero-shot scoring of a short document/summary pair.
//!
//! The NLI probabilities come from a packaged fixture, so the example runs
//! offline. Every (op1, op2) combination is printed together with the
//! supporting document sentence of each summary sentence.

use std::path::Path;

use nli_consistency::aggregator::{score_zs, Operator, ZsConfig};
use nli_consistency::matrix::{build_pair_matrix, CategorySet};
use nli_consistency::nli::FixtureBackend;
use nli_consistency::segmenter::{split_blocks, Granularity, Side};

pub fn run_example() -> nli_consistency::Result<Vec<(Operator, Operator, f64)>> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let backend = FixtureBackend::load(data.join("council_fixture.json"))?;
    let document = std::fs::read_to_string(data.join("council_document.txt")).expect("packaged data");
    let summary = std::fs::read_to_string(data.join("council_summary.txt")).expect("packaged data");

    let doc = split_blocks(&document, Granularity::Sentence, Side::Document)?;
    let sum = split_blocks(&summary, Granularity::Sentence, Side::Summary)?;
    let mat = build_pair_matrix(&doc, &sum, &backend)?;
    println!("{} document sentences x {} summary sentences", mat.m(), mat.n());

    let default = score_zs(&mat, &ZsConfig::default())?;
    for (j, s) in sum.blocks().iter().enumerate() {
        let support = default.support.as_ref().map(|sup| sup[j]);
        println!(
            "  {:.2}  {s:?}  <- {}",
            default.per_sentence[j],
            support.map_or("-".to_string(), |i| format!("{:?}", doc.blocks()[i]))
        );
    }

    let mut scores = Vec::new();
    for op1 in Operator::ALL {
        for op2 in Operator::ALL {
            let cfg = ZsConfig {
                op1,
                op2,
                cats: CategorySet::ENTAILMENT,
            };
            let v = score_zs(&mat, &cfg)?.final_score;
            println!("ZS({op1},{op2}) = {v:.4}");
            scores.push((op1, op2, v));
        }
    }
    Ok(scores)
}

fn main() -> nli_consistency::Result<()> {
    run_example().map(|_| ())
}
