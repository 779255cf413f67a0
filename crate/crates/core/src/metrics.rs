//! Evaluation metrics for binary consistency labels (`true` = consistent).
//!
//! A score is turned into a prediction with `score >= threshold`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn from_predictions(labels: &[bool], predictions: &[bool]) -> Self {
        assert_eq!(labels.len(), predictions.len(), "labels and predictions differ in length");
        let mut c = ConfusionCounts::default();
        for (&y, &p) in labels.iter().zip(predictions) {
            match (y, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Mean of sensitivity and specificity.
    pub fn balanced_accuracy(&self) -> Result<f64> {
        let pos = self.tp + self.fn_;
        let neg = self.tn + self.fp;
        if pos == 0 || neg == 0 {
            return Err(Error::SingleClassLabels);
        }
        Ok(0.5 * (self.tp as f64 / pos as f64 + self.tn as f64 / neg as f64))
    }
}

fn check_two_classes(labels: &[bool]) -> Result<()> {
    if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
        Err(Error::SingleClassLabels)
    } else {
        Ok(())
    }
}

pub fn balanced_accuracy(labels: &[bool], predictions: &[bool]) -> Result<f64> {
    ConfusionCounts::from_predictions(labels, predictions).balanced_accuracy()
}

pub fn predict(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= threshold).collect()
}

pub fn balanced_accuracy_at(labels: &[bool], scores: &[f64], threshold: f64) -> Result<f64> {
    balanced_accuracy(labels, &predict(scores, threshold))
}

/// Area under the ROC curve: the probability that a random positive outscores
/// a random negative, with ties counted as one half. Computed from mid-ranks.
pub fn roc_auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    assert_eq!(labels.len(), scores.len(), "labels and scores differ in length");
    check_two_classes(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their average
        let mid_rank = (i + j + 2) as f64 / 2.0;
        let positives = order[i..=j].iter().filter(|&&k| labels[k]).count();
        pos_rank_sum += mid_rank * positives as f64;
        i = j + 1;
    }
    let p = labels.iter().filter(|&&y| y).count() as f64;
    let n = labels.len() as f64 - p;
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// A selected decision threshold and the balanced accuracy it reaches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub balanced_accuracy: f64,
}

/// Candidate thresholds: -inf, the midpoints between consecutive distinct
/// scores, and +inf, in increasing order.
pub fn threshold_candidates(scores: &[f64]) -> Vec<f64> {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut out = Vec::with_capacity(distinct.len() + 1);
    out.push(f64::NEG_INFINITY);
    out.extend(distinct.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    out.push(f64::INFINITY);
    out
}

/// Threshold maximizing balanced accuracy of `score >= t`; ties go to the
/// smallest threshold.
pub fn select_threshold(labels: &[bool], scores: &[f64]) -> Result<ThresholdChoice> {
    assert_eq!(labels.len(), scores.len(), "labels and scores differ in length");
    check_two_classes(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    let ba = |tp: usize, tn: usize| 0.5 * (tp as f64 / pos as f64 + tn as f64 / neg as f64);

    // Start at -inf: everything predicted consistent.
    let (mut tp, mut tn) = (pos, 0usize);
    let mut best = ThresholdChoice {
        threshold: f64::NEG_INFINITY,
        balanced_accuracy: ba(tp, tn),
    };
    let mut i = 0;
    while i < order.len() {
        let value = scores[order[i]];
        while i < order.len() && scores[order[i]] == value {
            if labels[order[i]] {
                tp -= 1;
            } else {
                tn += 1;
            }
            i += 1;
        }
        let threshold = match order.get(i) {
            Some(&next) => value + (scores[next] - value) / 2.0,
            None => f64::INFINITY,
        };
        let score = ba(tp, tn);
        if score > best.balanced_accuracy {
            best = ThresholdChoice {
                threshold,
                balanced_accuracy: score,
            };
        }
    }
    Ok(best)
}

/// Fleiss' kappa for an items x categories table of rating counts.
pub fn fleiss_kappa(table: &[Vec<u32>]) -> Result<f64> {
    let raters = match table.first() {
        Some(row) => row.iter().sum::<u32>(),
        None => return Err(Error::EmptyInput("empty rating table".into())),
    };
    let width = table[0].len();
    if table
        .iter()
        .any(|row| row.len() != width || row.iter().sum::<u32>() != raters)
    {
        return Err(Error::UnequalRaterCounts);
    }
    if raters < 2 {
        return Err(Error::Config("Fleiss' kappa needs at least 2 raters per item".into()));
    }
    let items = table.len() as f64;
    let r = raters as f64;
    let mut category_totals = vec![0.0; width];
    let mut agreement_sum = 0.0;
    for row in table {
        let mut squares = 0.0;
        for (j, &count) in row.iter().enumerate() {
            let c = count as f64;
            category_totals[j] += c;
            squares += c * c;
        }
        agreement_sum += (squares - r) / (r * (r - 1.0));
    }
    let p_bar = agreement_sum / items;
    let p_e: f64 = category_totals
        .iter()
        .map(|t| {
            let p = t / (items * r);
            p * p
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return if (p_bar - 1.0).abs() < 1e-15 {
            Ok(1.0)
        } else {
            Err(Error::UndefinedAgreement)
        };
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_resamples: usize,
    /// Family-wise significance level before correction.
    pub alpha: f64,
    /// Number of simultaneous tests; alpha is divided by it.
    pub n_tests: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_resamples: 10_000,
            alpha: 0.05,
            n_tests: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub diff_point_estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha_corrected: f64,
    pub significant: bool,
    pub n_resamples: usize,
    /// Resamples thrown away because they held a single class.
    pub redrawn: usize,
}

/// Linear-interpolated quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Paired bootstrap over samples of `statistic(A) - statistic(B)`.
///
/// Resample `i` draws from its own ChaCha stream (`seed`, stream `i`), so
/// results do not depend on how the work is scheduled.
fn paired_bootstrap<F>(labels: &[bool], cfg: &BootstrapConfig, diff: F) -> Result<SignificanceResult>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    if cfg.n_resamples < 1000 {
        return Err(Error::Config(format!(
            "bootstrap needs at least 1000 resamples, got {}",
            cfg.n_resamples
        )));
    }
    if cfg.n_tests == 0 || !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::Config("bootstrap alpha must be in (0, 1) and n_tests >= 1".into()));
    }
    check_two_classes(labels)?;
    let n = labels.len();
    let all: Vec<usize> = (0..n).collect();
    let point = diff(&all)?;
    let cap = 10 * cfg.n_resamples;

    let draws: Vec<(f64, usize)> = (0..cfg.n_resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let mut idx = vec![0usize; n];
            for attempt in 0..cap {
                for slot in idx.iter_mut() {
                    *slot = rng.gen_range(0..n);
                }
                let has_pos = idx.iter().any(|&k| labels[k]);
                let has_neg = idx.iter().any(|&k| !labels[k]);
                if has_pos && has_neg {
                    return Ok((diff(&idx)?, attempt));
                }
            }
            Err(Error::SingleClassLabels)
        })
        .collect::<Result<_>>()?;

    let redrawn: usize = draws.iter().map(|d| d.1).sum();
    if cfg.n_resamples + redrawn > cap {
        return Err(Error::SingleClassLabels);
    }
    let mut diffs: Vec<f64> = draws.into_iter().map(|d| d.0).collect();
    diffs.sort_by(f64::total_cmp);
    let alpha_corrected = cfg.alpha / cfg.n_tests as f64;
    // percentile interval, widened if needed so it always contains the point estimate
    let ci_low = quantile_sorted(&diffs, alpha_corrected / 2.0).min(point);
    let ci_high = quantile_sorted(&diffs, 1.0 - alpha_corrected / 2.0).max(point);
    Ok(SignificanceResult {
        diff_point_estimate: point,
        ci_low,
        ci_high,
        alpha_corrected,
        significant: ci_low > 0.0 || ci_high < 0.0,
        n_resamples: cfg.n_resamples,
        redrawn,
    })
}

/// Bootstrap test of the balanced-accuracy difference (A - B), each scorer
/// evaluated at its own fixed threshold.
pub fn bootstrap_compare(
    labels: &[bool],
    scores_a: &[f64],
    scores_b: &[f64],
    thresholds: (f64, f64),
    cfg: &BootstrapConfig,
) -> Result<SignificanceResult> {
    assert_eq!(labels.len(), scores_a.len(), "labels and scores_a differ in length");
    assert_eq!(labels.len(), scores_b.len(), "labels and scores_b differ in length");
    let pred_a = predict(scores_a, thresholds.0);
    let pred_b = predict(scores_b, thresholds.1);
    paired_bootstrap(labels, cfg, |idx| {
        let mut a = ConfusionCounts::default();
        let mut b = ConfusionCounts::default();
        for &k in idx {
            tally(&mut a, labels[k], pred_a[k]);
            tally(&mut b, labels[k], pred_b[k]);
        }
        Ok(a.balanced_accuracy()? - b.balanced_accuracy()?)
    })
}

/// Bootstrap test of the ROC-AUC difference (A - B).
pub fn bootstrap_compare_roc_auc(
    labels: &[bool],
    scores_a: &[f64],
    scores_b: &[f64],
    cfg: &BootstrapConfig,
) -> Result<SignificanceResult> {
    paired_bootstrap(labels, cfg, |idx| {
        let y: Vec<bool> = idx.iter().map(|&k| labels[k]).collect();
        let a: Vec<f64> = idx.iter().map(|&k| scores_a[k]).collect();
        let b: Vec<f64> = idx.iter().map(|&k| scores_b[k]).collect();
        Ok(roc_auc(&y, &a)? - roc_auc(&y, &b)?)
    })
}

fn tally(c: &mut ConfusionCounts, label: bool, pred: bool) {
    match (label, pred) {
        (true, true) => c.tp += 1,
        (false, true) => c.fp += 1,
        (false, false) => c.tn += 1,
        (true, false) => c.fn_ += 1,
    }
}

/// JSON has no infinities; the sentinel thresholds are written as strings.
pub mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *t == f64::INFINITY {
            s.serialize_str("+inf")
        } else if *t == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(*t)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "+inf" | "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("bad threshold {other:?}"))),
            },
        }
    }
}
