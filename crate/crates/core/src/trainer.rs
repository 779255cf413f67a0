//! Fitting [`ConvModel`] parameters with binary cross-entropy and Adam.
//!
//! Histogram features are computed once up front; training only touches the
//! `h * |cats| + 1` kernel parameters, so gradients are written out in closed
//! form: final = mean_j logistic(w . x_j + b), loss = BCE(final, label).

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregator::{column_features, logistic, ConvModel};
use crate::error::{Error, Result};
use crate::matrix::{matrix_for_texts, CategorySet, MatrixCache};
use crate::metrics::balanced_accuracy;
use crate::nli::NliBackend;
use crate::segmenter::Granularity;

/// Scores are clamped to `[LOSS_CLAMP, 1 - LOSS_CLAMP]` before taking logs.
pub const LOSS_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub subsample_size: usize,
    /// Epochs without a validation improvement before stopping; `None` disables early stopping.
    pub patience: Option<usize>,
    /// Decision threshold used for validation balanced accuracy.
    pub validation_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-2,
            max_epochs: 10,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            subsample_size: 10_000,
            patience: Some(3),
            validation_threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-summary-sentence feature vectors of one (document, summary) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub features: Vec<Vec<f64>>,
    /// `true` = consistent.
    pub label: bool,
}

pub fn loss(final_score: f64, label: bool) -> f64 {
    let p = final_score.clamp(LOSS_CLAMP, 1.0 - LOSS_CLAMP);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Mean loss over the batch at the current parameters.
    pub loss: f64,
}

fn check_example(model: &ConvModel, ex: &TrainExample) -> Result<()> {
    if ex.features.is_empty() {
        return Err(Error::DimensionZero("training example without summary sentences".into()));
    }
    match ex.features.iter().find(|f| f.len() != model.feature_len()) {
        Some(f) => Err(Error::ModelShapeMismatch {
            expected: model.feature_len(),
            found: f.len(),
        }),
        None => Ok(()),
    }
}

/// Mean over the batch of d(loss)/d(weights, bias).
pub fn gradient(model: &ConvModel, batch: &[TrainExample]) -> Result<Gradients> {
    model.validate()?;
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty training batch".into()));
    }
    let mut gw = vec![0.0; model.feature_len()];
    let mut gb = 0.0;
    let mut total_loss = 0.0;
    for ex in batch {
        check_example(model, ex)?;
        let n = ex.features.len() as f64;
        let sentence: Vec<f64> = ex.features.iter().map(|f| logistic(model.logit(f))).collect();
        let fin = sentence.iter().sum::<f64>() / n;
        total_loss += loss(fin, ex.label);
        let p = fin.clamp(LOSS_CLAMP, 1.0 - LOSS_CLAMP);
        let dl_dfinal = if ex.label { -1.0 / p } else { 1.0 / (1.0 - p) };
        for (s, x) in sentence.iter().zip(&ex.features) {
            let dz = dl_dfinal * s * (1.0 - s) / n;
            gb += dz;
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += dz * xi;
            }
        }
    }
    let scale = 1.0 / batch.len() as f64;
    gw.iter_mut().for_each(|g| *g *= scale);
    Ok(Gradients {
        weights: gw,
        bias: gb * scale,
        loss: total_loss * scale,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamConfig {
    fn from(cfg: &TrainConfig) -> Self {
        AdamConfig {
            learning_rate: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len(), "parameter / gradient length mismatch");
    assert_eq!(params.len(), state.m.len(), "parameter / state length mismatch");
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean loss over the full training set after the epoch's updates.
    pub train_loss: f64,
    pub valid_balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub model: ConvModel,
    pub best_epoch: usize,
    pub history: Vec<EpochLog>,
}

fn mean_loss(model: &ConvModel, set: &[TrainExample]) -> Result<f64> {
    let mut total = 0.0;
    for ex in set {
        total += loss(model.score_features(&ex.features)?.final_score, ex.label);
    }
    Ok(total / set.len() as f64)
}

pub fn validation_balanced_accuracy(
    model: &ConvModel,
    set: &[TrainExample],
    threshold: f64,
) -> Result<f64> {
    let labels: Vec<bool> = set.iter().map(|e| e.label).collect();
    let preds = set
        .iter()
        .map(|ex| Ok(model.score_features(&ex.features)?.final_score >= threshold))
        .collect::<Result<Vec<bool>>>()?;
    balanced_accuracy(&labels, &preds)
}

/// Trains from `init` (usually [`ConvModel::zeros`]) and returns the
/// parameters of the epoch with the best validation balanced accuracy.
pub fn train(
    train_set: &[TrainExample],
    valid_set: &[TrainExample],
    init: ConvModel,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    init.validate()?;
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::EmptyInput("training and validation sets must be non-empty".into()));
    }
    let positives = train_set.iter().filter(|e| e.label).count();
    if positives == 0 || positives == train_set.len() {
        return Err(Error::DegenerateLabels);
    }
    for ex in train_set.iter().chain(valid_set) {
        check_example(&init, ex)?;
    }

    let adam = AdamConfig::from(cfg);
    let mut model = init;
    let mut params: Vec<f64> = model.weights.iter().copied().chain([model.bias]).collect();
    let mut state = AdamState::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best: Option<(f64, usize, ConvModel)> = None;
    let mut history = Vec::new();
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainExample> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let g = gradient(&model, &batch)?;
            let grads: Vec<f64> = g.weights.into_iter().chain([g.bias]).collect();
            adam_step(&mut params, &grads, &mut state, &adam);
            let (w, b) = params.split_at(params.len() - 1);
            model.weights.copy_from_slice(w);
            model.bias = b[0];
        }
        let train_loss = mean_loss(&model, train_set)?;
        let valid_ba = validation_balanced_accuracy(&model, valid_set, cfg.validation_threshold)?;
        log::debug!("epoch {epoch}: train loss {train_loss:.6}, valid balanced accuracy {valid_ba:.4}");
        history.push(EpochLog {
            epoch,
            train_loss,
            valid_balanced_accuracy: valid_ba,
        });
        if best.as_ref().map_or(true, |(ba, _, _)| valid_ba > *ba) {
            best = Some((valid_ba, epoch, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        best_epoch,
        history,
    })
}

/// Uniform subsample of at most `size` examples that keeps the classes as
/// balanced as the data allows.
pub fn stratified_subsample(examples: &[TrainExample], size: usize, seed: u64) -> Vec<TrainExample> {
    if examples.len() <= size {
        return examples.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].label).collect();
    let mut neg: Vec<usize> = (0..examples.len()).filter(|&i| !examples[i].label).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let half = size / 2;
    let take_pos = half.min(pos.len()).max(size.saturating_sub(neg.len()));
    let take_neg = size - take_pos;
    let mut picked: Vec<usize> = pos[..take_pos].iter().chain(&neg[..take_neg]).copied().collect();
    picked.sort_unstable();
    picked.into_iter().map(|i| examples[i].clone()).collect()
}

/// One line of a training corpus JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub id: String,
    pub document: String,
    #[serde(alias = "claim")]
    pub summary: String,
    pub label: u8,
}

pub fn load_training_corpus(path: impl AsRef<Path>) -> Result<Vec<TrainRecord>> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let rec: TrainRecord = serde_json::from_str(line)?;
            if rec.label > 1 {
                return Err(Error::SchemaMismatch {
                    id: rec.id,
                    reason: format!("line {}: label must be 0 or 1", i + 1),
                });
            }
            Ok(rec)
        })
        .collect()
}

pub fn write_training_corpus(path: impl AsRef<Path>, records: &[TrainRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// How training records are turned into histogram features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub doc_granularity: Granularity,
    pub sum_granularity: Granularity,
    pub h: usize,
    pub cats: CategorySet,
    pub normalize_histograms: bool,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            doc_granularity: Granularity::Sentence,
            sum_granularity: Granularity::Sentence,
            h: 50,
            cats: CategorySet::ENTAILMENT,
            normalize_histograms: true,
        }
    }
}

impl FeatureSpec {
    pub fn init_model(&self) -> ConvModel {
        ConvModel::zeros(self.h, self.cats, self.normalize_histograms)
    }
}

/// Builds pair matrices and histogram features for every record, in parallel.
pub fn featurize(
    records: &[TrainRecord],
    backend: &dyn NliBackend,
    spec: &FeatureSpec,
    cache: Option<&MatrixCache>,
) -> Result<Vec<TrainExample>> {
    records
        .par_iter()
        .map(|rec| {
            let mat = matrix_for_texts(
                &rec.document,
                &rec.summary,
                spec.doc_granularity,
                spec.sum_granularity,
                backend,
                cache,
            )?;
            Ok(TrainExample {
                features: column_features(&mat, spec.h, spec.cats, spec.normalize_histograms)?,
                label: rec.label == 1,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(features: Vec<Vec<f64>>, label: bool) -> TrainExample {
        TrainExample { features, label }
    }

    #[test]
    fn loss_values() {
        assert!((loss(0.5, true) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss(0.5, false) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss(0.9, true) - 0.10536051565782628).abs() < 1e-12);
        assert!(loss(1.0, true) < 1e-10);
        assert!(loss(0.0, true).is_finite());
    }

    #[test]
    fn zero_model_bias_gradient_is_negative_for_positives() {
        let model = ConvModel::zeros(4, CategorySet::ENTAILMENT, true);
        let batch = vec![
            example(vec![vec![0.25; 4]; 3], true),
            example(vec![vec![1.0, 0.0, 0.0, 0.0]], true),
        ];
        assert!(gradient(&model, &batch).unwrap().bias < 0.0);
    }

    #[test]
    fn single_sentence_bias_gradient_is_score_minus_label() {
        let mut model = ConvModel::zeros(3, CategorySet::ENTAILMENT, true);
        model.weights = vec![0.4, -1.0, 2.0];
        model.bias = 0.3;
        let x = vec![0.2, 0.5, 0.3];
        let s = logistic(model.logit(&x));
        let g = gradient(&model, &[example(vec![x], true)]).unwrap();
        assert!((g.bias - (s - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn gradient_shape_errors() {
        let model = ConvModel::zeros(3, CategorySet::ENTAILMENT, true);
        assert!(matches!(
            gradient(&model, &[example(vec![vec![0.0; 4]], true)]),
            Err(Error::ModelShapeMismatch { expected: 3, found: 4 })
        ));
        assert!(gradient(&model, &[]).is_err());
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let cfg = AdamConfig::from(&TrainConfig::default());
        let mut p = vec![1.0];
        let mut st = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut st, &cfg);
        assert!((p[0] - (1.0 - 0.01)).abs() < 1e-9);
        assert_eq!(st.t, 1);

        let mut q = vec![0.3, -2.0];
        let mut st = AdamState::new(2);
        for _ in 0..10 {
            adam_step(&mut q, &[0.0, 0.0], &mut st, &cfg);
        }
        assert_eq!(q, vec![0.3, -2.0]);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let cfg = AdamConfig::from(&TrainConfig::default());
        let mut w = vec![1.0];
        let mut st = AdamState::new(1);
        for _ in 0..100 {
            let g = 2.0 * w[0];
            adam_step(&mut w, &[g], &mut st, &cfg);
        }
        assert!(w[0].abs() < 0.5, "w = {}", w[0]);
    }

    #[test]
    fn degenerate_labels_rejected() {
        let init = ConvModel::zeros(2, CategorySet::ENTAILMENT, true);
        let set = vec![example(vec![vec![1.0, 0.0]], true)];
        assert!(matches!(
            train(&set, &set, init, &TrainConfig::default()),
            Err(Error::DegenerateLabels)
        ));
    }

    #[test]
    fn two_example_loss_decreases() {
        let init = ConvModel::zeros(2, CategorySet::ENTAILMENT, true);
        let set = vec![
            example(vec![vec![0.0, 1.0]], true),
            example(vec![vec![1.0, 0.0]], false),
        ];
        let cfg = TrainConfig {
            patience: None,
            max_epochs: 5,
            ..TrainConfig::default()
        };
        let out = train(&set, &set, init, &cfg).unwrap();
        assert_eq!(out.history.len(), 5);
        for w in out.history.windows(2) {
            assert!(w[1].train_loss < w[0].train_loss);
        }
    }

    #[test]
    fn subsample_keeps_balance() {
        let examples: Vec<TrainExample> = (0..1000)
            .map(|i| example(vec![vec![i as f64]], i % 4 == 0))
            .collect();
        let sub = stratified_subsample(&examples, 100, 7);
        assert_eq!(sub.len(), 100);
        assert_eq!(sub.iter().filter(|e| e.label).count(), 50);
        assert_eq!(stratified_subsample(&examples, 100, 7), sub);
        // not enough positives: fill with negatives
        let sub = stratified_subsample(&examples, 600, 1);
        assert_eq!(sub.iter().filter(|e| e.label).count(), 250);
    }

    #[test]
    fn corpus_accepts_claim_alias() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        fs::write(
            &path,
            "{\"id\":\"a\",\"document\":\"D.\",\"claim\":\"C.\",\"label\":1}\n\n{\"id\":\"b\",\"document\":\"D.\",\"summary\":\"S.\",\"label\":0}\n",
        )
        .unwrap();
        let recs = load_training_corpus(&path).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].summary, "C.");
        fs::write(&path, "{\"id\":\"a\",\"document\":\"D.\",\"summary\":\"C.\",\"label\":2}\n").unwrap();
        assert!(matches!(load_training_corpus(&path), Err(Error::SchemaMismatch { .. })));
    }
}
