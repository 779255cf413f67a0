//! Benchmark evaluation and throughput measurement.
//!
//! Every scorer is run once per sample; scores are kept in a [`ScoreStore`]
//! (optionally persisted to disk) and all metrics, thresholds and bootstrap
//! tests are computed from the stored scores.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregator::{conv_score, score_zs, ConvModel, ZsConfig};
use crate::baselines::{mnli_doc_score, ner_overlap_score, EntityExtractor};
use crate::datasets::{by_dataset, BenchmarkSample, Split};
use crate::error::{Error, Result};
use crate::matrix::{matrix_for_texts, MatrixCache};
use crate::metrics::{
    bootstrap_compare, bootstrap_compare_roc_auc, roc_auc, select_threshold, threshold_serde,
    BootstrapConfig, SignificanceResult,
};
use crate::nli::NliBackend;
use crate::segmenter::{split_sentences, Granularity};

/// Anything that maps a (document, summary) pair to a consistency score.
pub trait Scorer: Send + Sync {
    /// Display name used in reports.
    fn name(&self) -> String;

    /// Identifier of everything that affects the scores; keys the score store.
    fn config_id(&self) -> String;

    fn score(&self, document: &str, summary: &str) -> Result<f64>;
}

/// Zero-shot operator scorer over a sentence-level pair matrix.
pub struct ZsScorer {
    pub backend: Arc<dyn NliBackend>,
    pub doc_granularity: Granularity,
    pub sum_granularity: Granularity,
    pub config: ZsConfig,
    pub cache: Option<MatrixCache>,
}

impl ZsScorer {
    pub fn new(backend: Arc<dyn NliBackend>) -> Self {
        ZsScorer {
            backend,
            doc_granularity: Granularity::Sentence,
            sum_granularity: Granularity::Sentence,
            config: ZsConfig::default(),
            cache: None,
        }
    }
}

impl Scorer for ZsScorer {
    fn name(&self) -> String {
        format!("ZS({},{})", self.config.op1, self.config.op2)
    }

    fn config_id(&self) -> String {
        format!(
            "zs/{}/{}/{}/{}/{}/{}",
            self.backend.id(),
            self.doc_granularity,
            self.sum_granularity,
            self.config.op1,
            self.config.op2,
            self.config.cats
        )
    }

    fn score(&self, document: &str, summary: &str) -> Result<f64> {
        let mat = matrix_for_texts(
            document,
            summary,
            self.doc_granularity,
            self.sum_granularity,
            self.backend.as_ref(),
            self.cache.as_ref(),
        )?;
        Ok(score_zs(&mat, &self.config)?.final_score)
    }
}

/// Histogram-convolution scorer with a trained kernel.
pub struct ConvScorer {
    pub backend: Arc<dyn NliBackend>,
    pub doc_granularity: Granularity,
    pub sum_granularity: Granularity,
    pub model: ConvModel,
    pub cache: Option<MatrixCache>,
}

impl ConvScorer {
    pub fn new(backend: Arc<dyn NliBackend>, model: ConvModel) -> Self {
        ConvScorer {
            backend,
            doc_granularity: Granularity::Sentence,
            sum_granularity: Granularity::Sentence,
            model,
            cache: None,
        }
    }
}

impl Scorer for ConvScorer {
    fn name(&self) -> String {
        format!("Conv(h={})", self.model.h)
    }

    fn config_id(&self) -> String {
        let model = serde_json::to_vec(&self.model).unwrap_or_default();
        format!(
            "conv/{}/{}/{}/{}",
            self.backend.id(),
            self.doc_granularity,
            self.sum_granularity,
            &hex::encode(Sha256::digest(&model))[..16]
        )
    }

    fn score(&self, document: &str, summary: &str) -> Result<f64> {
        let mat = matrix_for_texts(
            document,
            summary,
            self.doc_granularity,
            self.sum_granularity,
            self.backend.as_ref(),
            self.cache.as_ref(),
        )?;
        Ok(conv_score(&mat, &self.model)?.final_score)
    }
}

/// Whole document as premise, whole summary as hypothesis.
pub struct MnliDocScorer {
    pub backend: Arc<dyn NliBackend>,
}

impl Scorer for MnliDocScorer {
    fn name(&self) -> String {
        "MNLI-doc".into()
    }

    fn config_id(&self) -> String {
        format!("mnli-doc/{}", self.backend.id())
    }

    fn score(&self, document: &str, summary: &str) -> Result<f64> {
        mnli_doc_score(document, summary, self.backend.as_ref())
    }
}

pub struct NerOverlapScorer {
    pub extractor: Arc<dyn EntityExtractor>,
    pub extractor_id: String,
    pub types: BTreeSet<String>,
}

impl Scorer for NerOverlapScorer {
    fn name(&self) -> String {
        "NER-Overlap".into()
    }

    fn config_id(&self) -> String {
        let types: Vec<&str> = self.types.iter().map(String::as_str).collect();
        format!("ner-overlap/{}/{}", self.extractor_id, types.join(","))
    }

    fn score(&self, document: &str, summary: &str) -> Result<f64> {
        ner_overlap_score(document, summary, self.extractor.as_ref(), &self.types)
    }
}

/// Scorer backed by a closure; handy for synthetic experiments.
pub struct FnScorer<F> {
    name: String,
    f: F,
}

impl<F> FnScorer<F>
where
    F: Fn(&str, &str) -> Result<f64> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnScorer { name: name.into(), f }
    }
}

impl<F> Scorer for FnScorer<F>
where
    F: Fn(&str, &str) -> Result<f64> + Send + Sync,
{
    fn name(&self) -> String {
        self.name.clone()
    }

    fn config_id(&self) -> String {
        format!("fn/{}", self.name)
    }

    fn score(&self, document: &str, summary: &str) -> Result<f64> {
        (self.f)(document, summary)
    }
}

fn sample_key(s: &BenchmarkSample) -> String {
    let mut h = Sha256::new();
    for field in [&s.dataset, &s.id, &s.document, &s.summary] {
        h.update((field.len() as u64).to_le_bytes());
        h.update(field.as_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

/// Scores keyed by (scorer config, sample). Persisted as one JSON object
/// `{config_id: {sample_key: score}}` when opened on a file.
#[derive(Debug, Default)]
pub struct ScoreStore {
    path: Option<PathBuf>,
    scores: Mutex<BTreeMap<String, BTreeMap<String, f64>>>,
}

impl ScoreStore {
    pub fn in_memory() -> Self {
        ScoreStore::default()
    }

    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let scores = match fs::read_to_string(&path) {
            Ok(raw) => serde_json::from_str(&raw)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(Error::io(&path, e)),
        };
        Ok(ScoreStore {
            path: Some(path),
            scores: Mutex::new(scores),
        })
    }

    pub fn get(&self, config_id: &str, sample: &BenchmarkSample) -> Option<f64> {
        let scores = self.scores.lock().unwrap();
        scores.get(config_id)?.get(&sample_key(sample)).copied()
    }

    pub fn insert(&self, config_id: &str, sample: &BenchmarkSample, score: f64) {
        self.scores
            .lock()
            .unwrap()
            .entry(config_id.to_string())
            .or_default()
            .insert(sample_key(sample), score);
    }

    pub fn len(&self) -> usize {
        self.scores.lock().unwrap().values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the store back to its file (no-op for in-memory stores).
    pub fn flush(&self) -> Result<()> {
        let Some(path) = &self.path else { return Ok(()) };
        let raw = serde_json::to_vec(&*self.scores.lock().unwrap())?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(&raw).map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))
}

/// Scores every sample, reusing stored scores; newly computed ones are added to the store.
pub fn score_samples(
    scorer: &dyn Scorer,
    samples: &[BenchmarkSample],
    store: &ScoreStore,
    workers: usize,
) -> Result<Vec<f64>> {
    let config_id = scorer.config_id();
    pool(workers)?.install(|| {
        samples
            .par_iter()
            .map(|s| {
                if let Some(v) = store.get(&config_id, s) {
                    return Ok(v);
                }
                let v = scorer.score(&s.document, &s.summary)?;
                store.insert(&config_id, s, v);
                Ok(v)
            })
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub workers: usize,
    pub bootstrap: BootstrapConfig,
    /// Significance levels tested for every comparison (before correction).
    pub alphas: Vec<f64>,
    /// Index of the scorer every other scorer is compared against.
    pub reference: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            workers: default_workers(),
            bootstrap: BootstrapConfig::default(),
            alphas: vec![0.05, 0.01],
            reference: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetResult {
    pub balanced_accuracy: f64,
    pub roc_auc: f64,
    #[serde(with = "threshold_serde")]
    pub chosen_threshold: f64,
    pub validation_balanced_accuracy: f64,
    pub sample_count: usize,
    pub validation_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dataset: String,
    pub metric: String,
    pub scorer: String,
    pub reference: String,
    pub alpha: f64,
    pub result: SignificanceResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub docs: usize,
    pub seconds: f64,
    pub docs_per_min: f64,
    pub mean_doc_sentences: f64,
    pub warmup_docs: usize,
    /// Time spent in the warmup pass (includes any lazy model loading).
    pub warmup_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scorer: String,
    pub config_id: String,
    pub datasets: BTreeMap<String, DatasetResult>,
    /// Datasets left out because a split lacks one of the classes.
    pub skipped: Vec<String>,
    /// Unweighted mean of per-dataset test balanced accuracies.
    pub overall: f64,
    pub overall_roc_auc: f64,
    pub significance: Vec<Comparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput: Option<ThroughputReport>,
    pub config: serde_json::Value,
}

fn split_parts<'a>(
    samples: &'a [BenchmarkSample],
    scores: &[f64],
    split: Split,
) -> (Vec<bool>, Vec<f64>, Vec<&'a BenchmarkSample>) {
    let mut labels = Vec::new();
    let mut vals = Vec::new();
    let mut picked = Vec::new();
    for (s, &v) in samples.iter().zip(scores) {
        if s.split == split {
            labels.push(s.label);
            vals.push(v);
            picked.push(s);
        }
    }
    (labels, vals, picked)
}

fn has_both(labels: &[bool]) -> bool {
    labels.iter().any(|&y| y) && labels.iter().any(|&y| !y)
}

fn dataset_result(samples: &[BenchmarkSample], scores: &[f64]) -> Result<DatasetResult> {
    let (vy, vs, _) = split_parts(samples, scores, Split::Validation);
    let (ty, ts, _) = split_parts(samples, scores, Split::Test);
    if !has_both(&vy) || !has_both(&ty) {
        return Err(Error::SingleClassLabels);
    }
    let choice = select_threshold(&vy, &vs)?;
    Ok(DatasetResult {
        balanced_accuracy: crate::metrics::balanced_accuracy_at(&ty, &ts, choice.threshold)?,
        roc_auc: roc_auc(&ty, &ts)?,
        chosen_threshold: choice.threshold,
        validation_balanced_accuracy: choice.balanced_accuracy,
        sample_count: ty.len(),
        validation_count: vy.len(),
    })
}

fn report_from_scores(
    scorer: &dyn Scorer,
    samples: &[BenchmarkSample],
    scores: &[f64],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let mut datasets = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut grouped: BTreeMap<&str, (Vec<BenchmarkSample>, Vec<f64>)> = BTreeMap::new();
    for (s, &v) in samples.iter().zip(scores) {
        let e = grouped.entry(s.dataset.as_str()).or_default();
        e.0.push(s.clone());
        e.1.push(v);
    }
    for (name, (group, vals)) in grouped {
        match dataset_result(&group, &vals) {
            Ok(r) => {
                datasets.insert(name.to_string(), r);
            }
            Err(Error::SingleClassLabels) => {
                log::warn!("{name}: a split holds a single class; dataset excluded from the overall score");
                skipped.push(name.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    let mean = |f: fn(&DatasetResult) -> f64| {
        if datasets.is_empty() {
            f64::NAN
        } else {
            datasets.values().map(f).sum::<f64>() / datasets.len() as f64
        }
    };
    let overall = mean(|r| r.balanced_accuracy);
    let overall_roc_auc = mean(|r| r.roc_auc);
    Ok(EvalReport {
        scorer: scorer.name(),
        config_id: scorer.config_id(),
        overall,
        overall_roc_auc,
        datasets,
        skipped,
        significance: Vec::new(),
        throughput: None,
        config: serde_json::json!({
            "scorer": scorer.config_id(),
            "bootstrap": opts.bootstrap,
            "alphas": opts.alphas,
        }),
    })
}

/// Per dataset: threshold chosen on validation, balanced accuracy and
/// ROC-AUC on test; overall = unweighted mean over datasets.
pub fn evaluate(
    scorer: &dyn Scorer,
    samples: &[BenchmarkSample],
    store: &ScoreStore,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let scores = score_samples(scorer, samples, store, opts.workers)?;
    report_from_scores(scorer, samples, &scores, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub reports: Vec<EvalReport>,
}

/// Evaluates several scorers and bootstrap-tests each one against the
/// reference scorer on every dataset's test split, for balanced accuracy and
/// ROC-AUC. Alpha is Bonferroni-corrected by the number of comparisons per dataset.
pub fn benchmark(
    scorers: &[&dyn Scorer],
    samples: &[BenchmarkSample],
    store: &ScoreStore,
    opts: &EvalOptions,
) -> Result<BenchmarkReport> {
    let mut all_scores = Vec::with_capacity(scorers.len());
    let mut reports = Vec::with_capacity(scorers.len());
    for scorer in scorers {
        let scores = score_samples(*scorer, samples, store, opts.workers)?;
        reports.push(report_from_scores(*scorer, samples, &scores, opts)?);
        all_scores.push(scores);
    }
    if scorers.len() < 2 {
        return Ok(BenchmarkReport { reports });
    }
    let reference = opts.reference;
    if reference >= scorers.len() {
        return Err(Error::Config(format!("reference scorer index {reference} out of range")));
    }
    let n_tests = scorers.len() - 1;
    let datasets: Vec<String> = by_dataset(samples).into_keys().collect();
    for (d_index, dataset) in datasets.iter().enumerate() {
        let Some(ref_result) = reports[reference].datasets.get(dataset).cloned() else { continue };
        let idx: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].dataset == *dataset && samples[i].split == Split::Test)
            .collect();
        let labels: Vec<bool> = idx.iter().map(|&i| samples[i].label).collect();
        let ref_scores: Vec<f64> = idx.iter().map(|&i| all_scores[reference][i]).collect();
        for (k, scorer) in scorers.iter().enumerate() {
            if k == reference {
                continue;
            }
            let Some(result) = reports[k].datasets.get(dataset).cloned() else { continue };
            let scores: Vec<f64> = idx.iter().map(|&i| all_scores[k][i]).collect();
            for &alpha in &opts.alphas {
                let cfg = BootstrapConfig {
                    alpha,
                    n_tests,
                    seed: opts.bootstrap.seed.wrapping_add(d_index as u64),
                    ..opts.bootstrap
                };
                let ba = bootstrap_compare(
                    &labels,
                    &scores,
                    &ref_scores,
                    (result.chosen_threshold, ref_result.chosen_threshold),
                    &cfg,
                )?;
                let auc = bootstrap_compare_roc_auc(&labels, &scores, &ref_scores, &cfg)?;
                for (metric, r) in [("balanced_accuracy", ba), ("roc_auc", auc)] {
                    reports[k].significance.push(Comparison {
                        dataset: dataset.clone(),
                        metric: metric.into(),
                        scorer: scorer.name(),
                        reference: scorers[reference].name(),
                        alpha,
                        result: r,
                    });
                }
            }
        }
    }
    Ok(BenchmarkReport { reports })
}

impl BenchmarkReport {
    /// Plain-text table: one row per scorer, one column per dataset
    /// (test balanced accuracy, in percent), then Overall and Doc./min.
    /// `*` / `**` mark improvements over the reference that are significant at
    /// the largest / smallest tested alpha.
    pub fn leaderboard(&self) -> String {
        let datasets: BTreeSet<&String> =
            self.reports.iter().flat_map(|r| r.datasets.keys()).collect();
        let width = self
            .reports
            .iter()
            .map(|r| r.scorer.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = String::new();
        let _ = write!(out, "{:<width$}", "Model");
        for d in &datasets {
            let _ = write!(out, " | {:>10}", truncate(d, 10));
        }
        let _ = writeln!(out, " | {:>8} | {:>9}", "Overall", "Doc./min");
        let _ = writeln!(out, "{}", "-".repeat(width + datasets.len() * 13 + 23));
        for r in &self.reports {
            let _ = write!(out, "{:<width$}", r.scorer);
            for d in &datasets {
                let cell = match r.datasets.get(*d) {
                    Some(res) => format!("{:.1}{}", 100.0 * res.balanced_accuracy, self.marker(r, d)),
                    None => "-".into(),
                };
                let _ = write!(out, " | {cell:>10}");
            }
            let tput = r
                .throughput
                .as_ref()
                .map_or("-".to_string(), |t| format!("{:.1}", t.docs_per_min));
            let _ = writeln!(out, " | {:>8.1} | {tput:>9}", 100.0 * r.overall);
        }
        out
    }

    fn marker(&self, report: &EvalReport, dataset: &str) -> &'static str {
        let sig: Vec<&Comparison> = report
            .significance
            .iter()
            .filter(|c| {
                c.dataset == dataset
                    && c.metric == "balanced_accuracy"
                    && c.result.significant
                    && c.result.diff_point_estimate > 0.0
            })
            .collect();
        let min_alpha = report
            .significance
            .iter()
            .map(|c| c.alpha)
            .fold(f64::INFINITY, f64::min);
        if sig.iter().any(|c| c.alpha == min_alpha) {
            "**"
        } else if !sig.is_empty() {
            "*"
        } else {
            ""
        }
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Documents per minute for scoring `corpus` (document, summary pairs).
///
/// The first `warmup_docs` pairs are scored once before the clock starts;
/// the timed pass then covers the whole corpus with `workers` threads.
pub fn measure_throughput(
    scorer: &dyn Scorer,
    corpus: &[(String, String)],
    warmup_docs: usize,
    workers: usize,
) -> Result<ThroughputReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("throughput corpus is empty".into()));
    }
    let pool = pool(workers)?;
    let warm = &corpus[..warmup_docs.min(corpus.len())];
    let start = Instant::now();
    for (d, s) in warm {
        scorer.score(d, s)?;
    }
    let warmup_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    pool.install(|| {
        corpus
            .par_iter()
            .map(|(d, s)| scorer.score(d, s).map(|_| ()))
            .collect::<Result<Vec<()>>>()
    })?;
    let seconds = start.elapsed().as_secs_f64();

    let sentences: usize = corpus
        .iter()
        .map(|(d, _)| split_sentences(d).map_or(0, |s| s.len()))
        .sum();
    Ok(ThroughputReport {
        docs: corpus.len(),
        seconds,
        docs_per_min: docs_per_minute(corpus.len(), seconds),
        mean_doc_sentences: sentences as f64 / corpus.len() as f64,
        warmup_docs: warm.len(),
        warmup_seconds,
    })
}

pub fn docs_per_minute(docs: usize, seconds: f64) -> f64 {
    60.0 * docs as f64 / seconds
}

pub fn write_report_json(path: impl AsRef<Path>, report: &BenchmarkReport) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(path, e))
}

/// Stored scores of `samples` for `scorer`, if every one of them is present.
pub fn stored_scores(
    scorer: &dyn Scorer,
    samples: &[BenchmarkSample],
    store: &ScoreStore,
) -> Option<Vec<f64>> {
    let id = scorer.config_id();
    samples.iter().map(|s| store.get(&id, s)).collect()
}
