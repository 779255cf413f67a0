//! Metrics and paired bootstrap testing on raw score vectors.
//!
//! A sharp scorer and a noisy one are compared on the same labels: threshold
//! selection, balanced accuracy, ROC-AUC and the bootstrap confidence
//! interval of their balanced-accuracy difference.

use nli_consistency::metrics::{
    balanced_accuracy_at, bootstrap_compare, fleiss_kappa, roc_auc, select_threshold, BootstrapConfig,
    SignificanceResult,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> nli_consistency::Result<SignificanceResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let labels: Vec<bool> = (0..300).map(|i| i % 3 != 0).collect();
    let sharp: Vec<f64> = labels
        .iter()
        .map(|&y| if y { rng.gen_range(0.4..1.0) } else { rng.gen_range(0.0..0.6) })
        .collect();
    let noisy: Vec<f64> = labels
        .iter()
        .map(|&y| if y { rng.gen_range(0.2..1.0) } else { rng.gen_range(0.0..0.8) })
        .collect();

    let mut thresholds = Vec::new();
    for (name, scores) in [("sharp", &sharp), ("noisy", &noisy)] {
        let choice = select_threshold(&labels, scores)?;
        println!(
            "{name}: threshold {:.3}  balanced accuracy {:.3}  ROC-AUC {:.3}",
            choice.threshold,
            balanced_accuracy_at(&labels, scores, choice.threshold)?,
            roc_auc(&labels, scores)?
        );
        thresholds.push(choice.threshold);
    }

    let cfg = BootstrapConfig {
        n_resamples: 5000,
        seed: 42,
        ..BootstrapConfig::default()
    };
    let result = bootstrap_compare(&labels, &sharp, &noisy, (thresholds[0], thresholds[1]), &cfg)?;
    println!(
        "difference {:+.4}, {:.0}% CI [{:+.4}, {:+.4}], significant: {}",
        result.diff_point_estimate,
        100.0 * (1.0 - result.alpha_corrected),
        result.ci_low,
        result.ci_high,
        result.significant
    );

    // Agreement of three raters sorting five items into two categories.
    let kappa = fleiss_kappa(&[vec![3, 0], vec![0, 3], vec![2, 1], vec![3, 0], vec![1, 2]])?;
    println!("Fleiss' kappa {kappa:.3}");
    Ok(result)
}

fn main() -> nli_consistency::Result<()> {
    run_example().map(|_| ())
}
