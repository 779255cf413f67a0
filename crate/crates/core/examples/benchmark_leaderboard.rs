//! Evaluating several scorers on a multi-dataset benchmark.
//!
//! Two synthetic datasets with different positive rates are scored by
//! zero-shot variants and the whole-document baseline. Thresholds are tuned
//! on each validation split, test balanced accuracy is reported per dataset,
//! and every scorer is bootstrap-tested against the first one.

use std::sync::Arc;

use nli_consistency::aggregator::{Operator, ZsConfig};
use nli_consistency::harness::{benchmark, BenchmarkReport, EvalOptions, MnliDocScorer, ScoreStore, Scorer, ZsScorer};
use nli_consistency::matrix::CategorySet;
use nli_consistency::metrics::BootstrapConfig;
use nli_consistency::nli::{MockBackend, NliBackend};
use nli_consistency::synthetic::benchmark_dataset;

pub fn run_example() -> nli_consistency::Result<BenchmarkReport> {
    let mut samples = benchmark_dataset("news", 160, 0.5, 11);
    samples.extend(benchmark_dataset("dialog", 120, 0.8, 12));

    let backend: Arc<dyn NliBackend> = Arc::new(MockBackend::new());
    let zs = |op1, op2| {
        let mut s = ZsScorer::new(backend.clone());
        s.config = ZsConfig {
            op1,
            op2,
            cats: CategorySet::ENTAILMENT,
        };
        s
    };
    let max_mean = zs(Operator::Max, Operator::Mean);
    let mean_mean = zs(Operator::Mean, Operator::Mean);
    let doc = MnliDocScorer {
        backend: backend.clone(),
    };
    let scorers: [&dyn Scorer; 3] = [&max_mean, &mean_mean, &doc];

    let opts = EvalOptions {
        bootstrap: BootstrapConfig {
            n_resamples: 2000,
            ..BootstrapConfig::default()
        },
        ..EvalOptions::default()
    };
    let report = benchmark(&scorers, &samples, &ScoreStore::in_memory(), &opts)?;
    print!("{}", report.leaderboard());
    for r in &report.reports {
        for c in r.significance.iter().filter(|c| c.metric == "balanced_accuracy" && c.alpha == 0.05) {
            println!(
                "{} vs {} on {}: diff {:+.3} CI [{:+.3}, {:+.3}] significant={}",
                c.scorer, c.reference, c.dataset, c.result.diff_point_estimate, c.result.ci_low, c.result.ci_high,
                c.result.significant
            );
        }
    }
    Ok(report)
}

fn main() -> nli_consistency::Result<()> {
    run_example().map(|_| ())
}
