//! Reducing a pair matrix to a single consistency score.
//!
//! Two families live here:
//! - zero-shot operator reduction ([`score_zs`]): `op1` collapses each summary
//!   column over the document rows, `op2` collapses the resulting vector;
//! - histogram convolution ([`conv_score`]): each column is binned into `h`
//!   bins per category, a learned kernel maps the histogram to a logit, and
//!   the per-sentence logistic scores are averaged.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Category, CategorySet, PairMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operator {
    Min,
    Mean,
    Max,
}

impl Operator {
    pub const ALL: [Operator; 3] = [Operator::Min, Operator::Mean, Operator::Max];

    /// Reduces a non-empty slice.
    pub fn reduce(self, values: &[f64]) -> f64 {
        match self {
            Operator::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
            Operator::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Operator::Mean => values.iter().sum::<f64>() / values.len() as f64,
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Operator::Min => "min",
            Operator::Mean => "mean",
            Operator::Max => "max",
        })
    }
}

impl FromStr for Operator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "min" => Ok(Operator::Min),
            "mean" | "avg" => Ok(Operator::Mean),
            "max" => Ok(Operator::Max),
            other => Err(Error::Config(format!("unknown operator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ZsConfig {
    /// Reduces the document rows of each summary column.
    pub op1: Operator,
    /// Reduces across summary columns.
    pub op2: Operator,
    pub cats: CategorySet,
}

impl Default for ZsConfig {
    fn default() -> Self {
        ZsConfig {
            op1: Operator::Max,
            op2: Operator::Mean,
            cats: CategorySet::ENTAILMENT,
        }
    }
}

/// Zero-shot reduction of a non-primary category, reported alongside the score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryDiagnostic {
    pub category: Category,
    pub score: f64,
    pub per_sentence: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    #[serde(rename = "final")]
    pub final_score: f64,
    pub per_sentence: Vec<f64>,
    /// Document row that attained the column maximum (zero-shot with `op1 = max`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<CategoryDiagnostic>,
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Zero-shot operator reduction.
///
/// When several categories are enabled each is reduced independently; the
/// first one in E, N, C order provides the score and the rest are returned
/// as diagnostics.
pub fn score_zs(mat: &PairMatrix, cfg: &ZsConfig) -> Result<ScoreBreakdown> {
    if mat.m() == 0 || mat.n() == 0 {
        return Err(Error::DimensionZero(format!("{}x{} pair matrix", mat.m(), mat.n())));
    }
    let mut reductions = cfg.cats.categories().into_iter().map(|cat| {
        let columns: Vec<Vec<f64>> = (0..mat.n()).map(|j| mat.column(j, cat)).collect();
        let per_sentence: Vec<f64> = columns.iter().map(|c| cfg.op1.reduce(c)).collect();
        let support = (cfg.op1 == Operator::Max)
            .then(|| columns.iter().map(|c| argmax_lowest(c)).collect());
        (cat, cfg.op2.reduce(&per_sentence), per_sentence, support)
    });
    let (_, final_score, per_sentence, support) = reductions
        .next()
        .expect("category set is never empty");
    let diagnostics = reductions
        .map(|(category, score, per_sentence, _)| CategoryDiagnostic {
            category,
            score,
            per_sentence,
        })
        .collect();
    Ok(ScoreBreakdown {
        final_score,
        per_sentence,
        support,
        diagnostics,
    })
}

/// Bin counts for one summary column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: Vec<f64>,
}

impl Histogram {
    pub fn h(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Divides every count by the total so the bins sum to one.
    pub fn normalized(&self) -> Histogram {
        let total = self.total();
        Histogram {
            counts: self.counts.iter().map(|c| c / total).collect(),
        }
    }
}

/// Index of the bin `[k/h, (k+1)/h)` holding `score`; the top bin also holds 1.0.
pub fn bin_index(score: f64, h: usize) -> usize {
    let hf = h as f64;
    let mut k = ((score * hf).floor() as usize).min(h - 1);
    // correct for rounding in score * h near bin edges
    while k + 1 < h && (k + 1) as f64 / hf <= score {
        k += 1;
    }
    while k > 0 && (k as f64) / hf > score {
        k -= 1;
    }
    k
}

/// Raw-count histogram of `scores` over `h` evenly spaced bins on [0, 1].
pub fn bin_column(scores: &[f64], h: usize) -> Result<Histogram> {
    if h < 2 {
        return Err(Error::Config(format!("bin count must be at least 2, got {h}")));
    }
    let mut counts = vec![0.0; h];
    for &s in scores {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::OutOfRangeScore(s));
        }
        counts[bin_index(s, h)] += 1.0;
    }
    Ok(Histogram { counts })
}

/// Per-summary-column feature vectors: one histogram per included category,
/// concatenated in E, N, C order.
pub fn column_features(
    mat: &PairMatrix,
    h: usize,
    cats: CategorySet,
    normalize: bool,
) -> Result<Vec<Vec<f64>>> {
    if mat.m() == 0 || mat.n() == 0 {
        return Err(Error::DimensionZero(format!("{}x{} pair matrix", mat.m(), mat.n())));
    }
    let categories = cats.categories();
    (0..mat.n())
        .map(|j| {
            let mut features = Vec::with_capacity(h * categories.len());
            for &cat in &categories {
                let hist = bin_column(&mat.column(j, cat), h)?;
                let hist = if normalize { hist.normalized() } else { hist };
                features.extend(hist.counts);
            }
            Ok(features)
        })
        .collect()
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let ez = z.exp();
        ez / (1.0 + ez)
    }
}

pub const CONV_MODEL_FORMAT_VERSION: u32 = 1;

/// Learned histogram kernel: one weight per (category, bin) plus a bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvModel {
    pub format_version: u32,
    pub h: usize,
    pub cats: CategorySet,
    pub normalize_histograms: bool,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ConvModel {
    /// All-zero model (every sentence scores 0.5).
    pub fn zeros(h: usize, cats: CategorySet, normalize_histograms: bool) -> Self {
        ConvModel {
            format_version: CONV_MODEL_FORMAT_VERSION,
            h,
            cats,
            normalize_histograms,
            weights: vec![0.0; h * cats.len()],
            bias: 0.0,
        }
    }

    pub fn feature_len(&self) -> usize {
        self.h * self.cats.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONV_MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported conv model format_version {}",
                self.format_version
            )));
        }
        if self.h < 2 {
            return Err(Error::Config(format!("bin count must be at least 2, got {}", self.h)));
        }
        if self.weights.len() != self.feature_len() {
            return Err(Error::ModelShapeMismatch {
                expected: self.feature_len(),
                found: self.weights.len(),
            });
        }
        Ok(())
    }

    pub fn logit(&self, features: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(features)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.bias
    }

    /// Scores precomputed column features (see [`column_features`]).
    pub fn score_features(&self, columns: &[Vec<f64>]) -> Result<ScoreBreakdown> {
        self.validate()?;
        if columns.is_empty() {
            return Err(Error::DimensionZero("no summary columns".into()));
        }
        if let Some(bad) = columns.iter().find(|c| c.len() != self.feature_len()) {
            return Err(Error::ModelShapeMismatch {
                expected: self.feature_len(),
                found: bad.len(),
            });
        }
        let per_sentence: Vec<f64> = columns.iter().map(|f| logistic(self.logit(f))).collect();
        Ok(ScoreBreakdown {
            final_score: Operator::Mean.reduce(&per_sentence),
            per_sentence,
            support: None,
            diagnostics: Vec::new(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: ConvModel = serde_json::from_str(&raw)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let raw = serde_json::to_string_pretty(self)?;
        fs::write(path, raw).map_err(|e| Error::io(path, e))
    }
}

/// Histogram-convolution score of a pair matrix.
pub fn conv_score(mat: &PairMatrix, model: &ConvModel) -> Result<ScoreBreakdown> {
    model.validate()?;
    let columns = column_features(mat, model.h, model.cats, model.normalize_histograms)?;
    model.score_features(&columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nli::BackendId;

    fn worked_example() -> PairMatrix {
        PairMatrix::from_entailment(
            &[
                vec![0.02, 0.02, 0.04],
                vec![0.98, 0.00, 0.00],
                vec![0.43, 0.99, 0.00],
                vec![0.00, 0.00, 0.01],
            ],
            BackendId::new("worked-example", "1").unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zs_max_mean_on_worked_example() {
        let out = score_zs(&worked_example(), &ZsConfig::default()).unwrap();
        assert_eq!(out.per_sentence, vec![0.98, 0.99, 0.04]);
        assert!((out.final_score - 0.67).abs() < 1e-9);
        assert_eq!(out.support, Some(vec![1, 2, 0]));
        let dropped = worked_example().select_columns(&[0, 1]).unwrap();
        let out = score_zs(&dropped, &ZsConfig::default()).unwrap();
        assert!((out.final_score - 0.985).abs() < 1e-9);
    }

    #[test]
    fn zs_operator_grid() {
        let mat = worked_example();
        let cfg = |op1, op2| ZsConfig {
            op1,
            op2,
            cats: CategorySet::ENTAILMENT,
        };
        let max_max = score_zs(&mat, &cfg(Operator::Max, Operator::Max)).unwrap();
        assert_eq!(max_max.final_score, 0.99);
        let min_min = score_zs(&mat, &cfg(Operator::Min, Operator::Min)).unwrap();
        assert_eq!(min_min.final_score, 0.0);
        assert!(min_min.support.is_none());
        let mean_max = score_zs(&mat, &cfg(Operator::Mean, Operator::Max)).unwrap();
        assert!((mean_max.final_score - 1.43 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn zs_ties_pick_lowest_row() {
        let mat = PairMatrix::from_entailment(
            &[vec![0.5], vec![0.9], vec![0.9]],
            BackendId::new("t", "1").unwrap(),
        )
        .unwrap();
        assert_eq!(score_zs(&mat, &ZsConfig::default()).unwrap().support, Some(vec![1]));
    }

    #[test]
    fn zs_extra_categories_are_diagnostics() {
        let cfg = ZsConfig {
            cats: CategorySet::ALL,
            ..ZsConfig::default()
        };
        let out = score_zs(&worked_example(), &cfg).unwrap();
        assert!((out.final_score - 0.67).abs() < 1e-9);
        let cats: Vec<Category> = out.diagnostics.iter().map(|d| d.category).collect();
        assert_eq!(cats, vec![Category::N, Category::C]);
    }

    #[test]
    fn binning_matches_worked_example() {
        let mat = worked_example();
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|j| bin_column(&mat.column(j, Category::E), 5).unwrap().counts)
            .collect();
        assert_eq!(cols[0], vec![2.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(cols[1], vec![3.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(cols[2], vec![4.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn top_bin_is_closed_and_edges_are_exact() {
        assert_eq!(bin_column(&[1.0, 1.0], 5).unwrap().counts, vec![0.0, 0.0, 0.0, 0.0, 2.0]);
        assert_eq!(bin_index(0.0, 5), 0);
        assert_eq!(bin_index(0.2, 5), 1);
        assert_eq!(bin_index(0.6, 5), 3);
        assert_eq!(bin_index(0.29, 100), 29);
        assert_eq!(bin_index(0.57, 100), 57);
        assert!(matches!(bin_column(&[1.01], 5), Err(Error::OutOfRangeScore(_))));
        assert!(bin_column(&[0.5], 1).is_err());
    }

    #[test]
    fn conv_zero_model_scores_half() {
        let model = ConvModel::zeros(50, CategorySet::ENTAILMENT, true);
        let out = conv_score(&worked_example(), &model).unwrap();
        assert!(out.per_sentence.iter().all(|&p| p == 0.5));
        assert_eq!(out.final_score, 0.5);
    }

    #[test]
    fn conv_constant_weights_ignore_matrix_when_normalized() {
        let mut model = ConvModel::zeros(10, CategorySet::ENTAILMENT, true);
        model.weights = vec![1.5; 10];
        model.bias = -0.25;
        let out = conv_score(&worked_example(), &model).unwrap();
        assert!((out.final_score - logistic(1.25)).abs() < 1e-12);
    }

    #[test]
    fn conv_step_kernel_on_worked_example() {
        let mut model = ConvModel::zeros(5, CategorySet::ENTAILMENT, true);
        model.weights = vec![0.0, 0.0, 0.0, 0.0, 10.0];
        model.bias = -5.0;
        let out = conv_score(&worked_example(), &model).unwrap();
        // frozen from an independent evaluation of mean(logistic(-2.5), logistic(-2.5), logistic(-5))
        assert!((out.per_sentence[0] - 0.07585818002124355).abs() < 1e-12);
        assert!((out.per_sentence[2] - 0.0066928509242848554).abs() < 1e-12);
        assert!((out.final_score - 0.05280307032225731).abs() < 1e-12);
    }

    #[test]
    fn conv_shape_mismatch() {
        let mut model = ConvModel::zeros(5, CategorySet::ALL, true);
        assert_eq!(model.weights.len(), 15);
        model.weights.pop();
        assert!(matches!(
            conv_score(&worked_example(), &model),
            Err(Error::ModelShapeMismatch { expected: 15, found: 14 })
        ));
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut model = ConvModel::zeros(3, "EC".parse().unwrap(), false);
        model.weights = vec![0.1, -0.2, 0.3, 1e-17, 2.5, -3.0];
        model.bias = 0.125;
        model.save(&path).unwrap();
        assert_eq!(ConvModel::load(&path).unwrap(), model);
        let raw: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(raw["cats"], serde_json::json!(["E", "C"]));
        assert_eq!(raw["format_version"], 1);
    }
}
