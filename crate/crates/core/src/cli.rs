//! Command-line front end: `score`, `train`, `ingest`, `benchmark` and
//! `throughput`.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 backend error,
//! 4 data error. Failures are reported on stderr as a JSON object
//! `{"error": kind, "message": text}`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::aggregator::{conv_score, score_zs, ConvModel, Operator, ZsConfig};
use crate::baselines::{default_entity_types, ExternalExtractor, RuleExtractor};
use crate::config::{config_keys_help, BackendKind, RunConfig};
use crate::datasets::{dataset_stats, ingest, load_benchmark, write_benchmark, DatasetSpec, MappingRule, Split};
use crate::error::{Error, ErrorClass, Result};
use crate::harness::{
    benchmark, measure_throughput, write_report_json, ConvScorer, EvalOptions, MnliDocScorer,
    NerOverlapScorer, ScoreStore, Scorer, ZsScorer,
};
use crate::matrix::{matrix_for_texts, CategorySet, MatrixCache};
use crate::metrics::BootstrapConfig;
use crate::nli::NliBackend;
use crate::segmenter::Granularity;
use crate::trainer::{featurize, load_training_corpus, stratified_subsample, train, FeatureSpec};

#[derive(Debug, Parser)]
#[command(name = "nli-consistency", version, about = "Summary consistency scoring with sentence-level NLI")]
#[command(after_long_help = config_keys_help())]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,

    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command; each one overrides the matching config key.
#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// NLI backend: mock, fixture or remote.
    #[arg(long, global = true, value_parser = parse_backend_kind)]
    pub backend: Option<BackendKind>,
    /// Fixture file for the fixture backend.
    #[arg(long, global = true)]
    pub fixture: Option<PathBuf>,
    /// Base URL of the remote NLI service.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    /// Document chunking: full, paragraph, two_sentence or sentence.
    #[arg(long, global = true, value_parser = parse_from_str::<Granularity>)]
    pub doc_granularity: Option<Granularity>,
    /// Summary chunking: full or sentence.
    #[arg(long, global = true, value_parser = parse_from_str::<Granularity>)]
    pub sum_granularity: Option<Granularity>,
    /// Reduction over document chunks: min, mean or max.
    #[arg(long, global = true, value_parser = parse_from_str::<Operator>)]
    pub op1: Option<Operator>,
    /// Reduction over summary sentences: min, mean or max.
    #[arg(long, global = true, value_parser = parse_from_str::<Operator>)]
    pub op2: Option<Operator>,
    /// Comma-separated categories, e.g. "E" or "E,C".
    #[arg(long, global = true, value_parser = parse_from_str::<CategorySet>)]
    pub cats: Option<CategorySet>,
    /// Number of histogram bins.
    #[arg(long, global = true)]
    pub h: Option<usize>,
    /// Use raw histogram counts instead of fractions.
    #[arg(long, global = true)]
    pub no_normalize: bool,
    /// Directory for cached pair matrices.
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Seed for bootstrap resampling and training (sets `seed` and `train.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for scoring.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score one document/summary pair and print the breakdown as JSON.
    #[command(after_long_help = config_keys_help())]
    Score(ScoreArgs),
    /// Train a histogram-convolution model.
    #[command(after_long_help = config_keys_help())]
    Train(TrainArgs),
    /// Convert a raw dataset file into canonical benchmark JSONL.
    #[command(after_long_help = config_keys_help())]
    Ingest(IngestArgs),
    /// Evaluate scorers on a benchmark file and print a leaderboard.
    #[command(after_long_help = config_keys_help())]
    Benchmark(BenchmarkArgs),
    /// Measure documents per minute for one scorer.
    #[command(after_long_help = config_keys_help())]
    Throughput(ThroughputArgs),
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, required_unless_present = "document_text", conflicts_with = "document_text")]
    pub document: Option<PathBuf>,
    #[arg(long)]
    pub document_text: Option<String>,
    #[arg(long, required_unless_present = "summary_text", conflicts_with = "summary_text")]
    pub summary: Option<PathBuf>,
    #[arg(long)]
    pub summary_text: Option<String>,
    /// zs, zs:OP1:OP2, conv:MODEL, mnli-doc, ner-overlap or ner-overlap:PROGRAM.
    #[arg(long, default_value = "zs")]
    pub scorer: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training JSONL with `document`, `summary` (or `claim`) and `label`.
    #[arg(long)]
    pub train: PathBuf,
    /// Validation JSONL in the same format.
    #[arg(long)]
    pub valid: PathBuf,
    /// Where to write the model JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Dataset name: cogensumm, xsumfaith, polytope, factcc, summeval, frank or passthrough.
    #[arg(long)]
    pub dataset: String,
    /// Name recorded in the output (defaults to the dataset name).
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Keep the raw annotations in the output records.
    #[arg(long)]
    pub with_annotations: bool,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Canonical benchmark JSONL (output of `ingest`, possibly concatenated).
    #[arg(long)]
    pub data: PathBuf,
    /// Scorer spec; repeat for several. The first one is the reference
    /// unless `benchmark.reference` says otherwise.
    #[arg(long = "scorer", required = true)]
    pub scorers: Vec<String>,
    /// Write the full report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Persistent score store; reruns reuse stored scores.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub n_resamples: Option<usize>,
    /// Also measure documents per minute on each test split.
    #[arg(long)]
    pub throughput: bool,
}

#[derive(Debug, Args)]
pub struct ThroughputArgs {
    /// Benchmark JSONL; test samples are used.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "zs")]
    pub scorer: String,
    /// Use at most this many documents.
    #[arg(long)]
    pub docs: Option<usize>,
    #[arg(long)]
    pub warmup_docs: Option<usize>,
}

fn parse_from_str<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_backend_kind(s: &str) -> std::result::Result<BackendKind, String> {
    serde_json::from_value(json!(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown backend {s:?} (expected mock, fixture or remote)"))
}

impl CommonArgs {
    /// Loads the config file (if any) and applies the flag overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.backend {
            cfg.backend.kind = v;
        }
        if let Some(v) = &self.fixture {
            cfg.backend.fixture = Some(v.clone());
            if self.backend.is_none() {
                cfg.backend.kind = BackendKind::Fixture;
            }
        }
        if let Some(v) = &self.endpoint {
            cfg.backend.endpoint = Some(v.clone());
            if self.backend.is_none() {
                cfg.backend.kind = BackendKind::Remote;
            }
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        set!(doc_granularity, sum_granularity, op1, op2, cats, h);
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.train.seed = seed;
        }
        if self.no_normalize {
            cfg.normalize_histograms = false;
        }
        if let Some(v) = &self.cache_dir {
            cfg.cache_dir = Some(v.clone());
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Everything a command needs: configuration, backend and matrix cache.
struct Context {
    cfg: RunConfig,
    backend: Arc<dyn NliBackend>,
    cache: Option<MatrixCache>,
}

impl Context {
    fn new(cfg: RunConfig) -> Result<Self> {
        let backend = cfg.backend.build()?;
        let cache = cfg.matrix_cache()?;
        Ok(Context { cfg, backend, cache })
    }

    fn zs(&self, op1: Operator, op2: Operator) -> ZsScorer {
        ZsScorer {
            backend: self.backend.clone(),
            doc_granularity: self.cfg.doc_granularity,
            sum_granularity: self.cfg.sum_granularity,
            config: ZsConfig {
                op1,
                op2,
                cats: self.cfg.cats,
            },
            cache: self.cache.clone(),
        }
    }

    /// Builds a scorer from a spec string.
    fn scorer(&self, spec: &str) -> Result<Box<dyn Scorer>> {
        let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
        match kind {
            "zs" if rest.is_empty() => Ok(Box::new(self.zs(self.cfg.op1, self.cfg.op2))),
            "zs" => {
                let (a, b) = rest
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("expected zs:OP1:OP2, got {spec:?}")))?;
                Ok(Box::new(self.zs(a.parse()?, b.parse()?)))
            }
            "conv" if !rest.is_empty() => {
                let mut scorer = ConvScorer::new(self.backend.clone(), ConvModel::load(rest)?);
                scorer.doc_granularity = self.cfg.doc_granularity;
                scorer.sum_granularity = self.cfg.sum_granularity;
                scorer.cache = self.cache.clone();
                Ok(Box::new(scorer))
            }
            "mnli-doc" => Ok(Box::new(MnliDocScorer {
                backend: self.backend.clone(),
            })),
            "ner-overlap" => {
                let (extractor, id): (Arc<dyn crate::baselines::EntityExtractor>, String) = if rest.is_empty() {
                    (Arc::new(RuleExtractor), "rule".into())
                } else {
                    let mut parts = rest.split_whitespace();
                    let program = parts.next().unwrap_or(rest);
                    let args: Vec<&str> = parts.collect();
                    (Arc::new(ExternalExtractor::spawn(program, &args)?), rest.to_string())
                };
                Ok(Box::new(NerOverlapScorer {
                    extractor,
                    extractor_id: id,
                    types: default_entity_types(),
                }))
            }
            _ => Err(Error::Config(format!(
                "unknown scorer {spec:?} (expected zs, zs:OP1:OP2, conv:MODEL, mnli-doc or ner-overlap)"
            ))),
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn text_arg(path: &Option<PathBuf>, text: &Option<String>) -> Result<String> {
    match (path, text) {
        (Some(p), _) => read_text(p),
        (None, Some(t)) => Ok(t.clone()),
        (None, None) => Err(Error::Config("missing input text".into())),
    }
}

fn cmd_score(ctx: &Context, args: &ScoreArgs, out: &mut dyn Write) -> Result<()> {
    let document = text_arg(&args.document, &args.document_text)?;
    let summary = text_arg(&args.summary, &args.summary_text)?;
    let (kind, rest) = args.scorer.split_once(':').unwrap_or((&args.scorer, ""));
    let value = if kind == "zs" || (kind == "conv" && !rest.is_empty()) {
        let mat = matrix_for_texts(
            &document,
            &summary,
            ctx.cfg.doc_granularity,
            ctx.cfg.sum_granularity,
            ctx.backend.as_ref(),
            ctx.cache.as_ref(),
        )?;
        let breakdown = if kind == "zs" {
            let (op1, op2) = match rest.split_once(':') {
                Some((a, b)) => (a.parse()?, b.parse()?),
                None if rest.is_empty() => (ctx.cfg.op1, ctx.cfg.op2),
                None => return Err(Error::Config(format!("expected zs:OP1:OP2, got {:?}", args.scorer))),
            };
            score_zs(&mat, &ZsConfig { op1, op2, cats: ctx.cfg.cats })?
        } else {
            conv_score(&mat, &ConvModel::load(rest)?)?
        };
        serde_json::to_value(breakdown)?
    } else {
        let scorer = ctx.scorer(&args.scorer)?;
        json!({ "final": scorer.score(&document, &summary)?, "per_sentence": [] })
    };
    writeln!(out, "{}", serde_json::to_string(&value)?).map_err(|e| Error::io("<stdout>", e))
}

fn cmd_train(ctx: &Context, args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let spec = FeatureSpec {
        doc_granularity: ctx.cfg.doc_granularity,
        sum_granularity: ctx.cfg.sum_granularity,
        h: ctx.cfg.h,
        cats: ctx.cfg.cats,
        normalize_histograms: ctx.cfg.normalize_histograms,
    };
    let train_records = load_training_corpus(&args.train)?;
    let valid_records = load_training_corpus(&args.valid)?;
    log::info!(
        "featurizing {} training and {} validation pairs",
        train_records.len(),
        valid_records.len()
    );
    let train_set = featurize(&train_records, ctx.backend.as_ref(), &spec, ctx.cache.as_ref())?;
    let train_set = stratified_subsample(&train_set, ctx.cfg.train.subsample_size, ctx.cfg.train.seed);
    let valid_set = featurize(&valid_records, ctx.backend.as_ref(), &spec, ctx.cache.as_ref())?;
    let outcome = train(&train_set, &valid_set, spec.init_model(), &ctx.cfg.train)?;
    outcome.model.save(&args.out)?;
    let summary = json!({
        "model": args.out,
        "best_epoch": outcome.best_epoch,
        "history": outcome.history,
        "train_examples": train_set.len(),
        "valid_examples": valid_set.len(),
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io("<stdout>", e))
}

fn cmd_ingest(ctx: &Context, args: &IngestArgs, out: &mut dyn Write) -> Result<()> {
    let rule: MappingRule = args.dataset.parse()?;
    let mut spec = DatasetSpec::builtin(rule);
    if let Some(name) = &args.name {
        spec.name = name.clone();
    }
    let samples = ingest(&spec, &args.input, &ctx.cfg.mapping)?;
    write_benchmark(&args.output, &samples, args.with_annotations)?;
    let stats = dataset_stats(&samples)?;
    let summary = json!({ "dataset": spec.name, "output": args.output, "stats": stats });
    writeln!(out, "{}", serde_json::to_string(&summary)?).map_err(|e| Error::io("<stdout>", e))
}

fn test_corpus(samples: &[crate::datasets::BenchmarkSample], limit: Option<usize>) -> Vec<(String, String)> {
    samples
        .iter()
        .filter(|s| s.split == Split::Test)
        .take(limit.unwrap_or(usize::MAX))
        .map(|s| (s.document.clone(), s.summary.clone()))
        .collect()
}

fn cmd_benchmark(ctx: &Context, args: &BenchmarkArgs, out: &mut dyn Write) -> Result<()> {
    let samples = load_benchmark(&args.data)?;
    let scorers = args
        .scorers
        .iter()
        .map(|s| ctx.scorer(s))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&dyn Scorer> = scorers.iter().map(|s| s.as_ref()).collect();
    let store = match &args.scores {
        Some(p) => ScoreStore::open(p)?,
        None => ScoreStore::in_memory(),
    };
    let settings = &ctx.cfg.benchmark;
    let opts = EvalOptions {
        workers: ctx.cfg.workers(),
        bootstrap: BootstrapConfig {
            n_resamples: args.n_resamples.unwrap_or(settings.n_resamples),
            seed: ctx.cfg.seed,
            ..BootstrapConfig::default()
        },
        alphas: settings.alphas.clone(),
        reference: settings.reference,
    };
    let mut report = benchmark(&refs, &samples, &store, &opts)?;
    store.flush()?;
    if args.throughput || settings.throughput {
        let corpus = test_corpus(&samples, None);
        for (r, scorer) in report.reports.iter_mut().zip(&refs) {
            r.throughput = Some(measure_throughput(*scorer, &corpus, settings.warmup_docs, opts.workers)?);
        }
    }
    if let Some(path) = &args.report {
        write_report_json(path, &report)?;
    }
    write!(out, "{}", report.leaderboard()).map_err(|e| Error::io("<stdout>", e))
}

fn cmd_throughput(ctx: &Context, args: &ThroughputArgs, out: &mut dyn Write) -> Result<()> {
    let samples = load_benchmark(&args.data)?;
    let scorer = ctx.scorer(&args.scorer)?;
    let corpus = test_corpus(&samples, args.docs);
    let warmup = args.warmup_docs.unwrap_or(ctx.cfg.benchmark.warmup_docs);
    let report = measure_throughput(scorer.as_ref(), &corpus, warmup, ctx.cfg.workers())?;
    let value = json!({ "scorer": scorer.name(), "throughput": report });
    writeln!(out, "{}", serde_json::to_string(&value)?).map_err(|e| Error::io("<stdout>", e))
}

/// Runs a parsed command, writing results to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let ctx = Context::new(cli.common.resolve()?)?;
    match &cli.command {
        Command::Score(a) => cmd_score(&ctx, a, out),
        Command::Train(a) => cmd_train(&ctx, a, out),
        Command::Ingest(a) => cmd_ingest(&ctx, a, out),
        Command::Benchmark(a) => cmd_benchmark(&ctx, a, out),
        Command::Throughput(a) => cmd_throughput(&ctx, a, out),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err.class() {
        ErrorClass::Input => 2,
        ErrorClass::Backend => 3,
        ErrorClass::Data => 4,
    }
}

pub fn error_json(err: &Error) -> String {
    json!({ "error": err.kind(), "message": err.to_string() }).to_string()
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "nli-consistency",
            "--op2",
            "max",
            "--cats",
            "E,C",
            "score",
            "--document-text",
            "a",
            "--summary-text",
            "b",
        ])
        .unwrap();
        let cfg = cli.common.resolve().unwrap();
        assert_eq!(cfg.op2, Operator::Max);
        assert_eq!(cfg.op1, Operator::Max);
        assert_eq!(cfg.cats.len(), 2);
    }

    #[test]
    fn fixture_flag_selects_fixture_backend() {
        let cli = Cli::try_parse_from([
            "nli-consistency",
            "--fixture",
            "f.json",
            "throughput",
            "--data",
            "d.jsonl",
        ])
        .unwrap();
        assert_eq!(cli.common.resolve().unwrap().backend.kind, BackendKind::Fixture);
    }

    #[test]
    fn every_command_help_lists_config_keys() {
        let mut cmd = Cli::command();
        let mut helps = vec![cmd.render_long_help().to_string()];
        for sub in cmd.get_subcommands_mut().filter(|s| s.get_name() != "help") {
            helps.push(sub.render_long_help().to_string());
        }
        assert_eq!(helps.len(), 6);
        for help in helps {
            for key in crate::config::CONFIG_KEYS {
                assert!(help.contains(key), "missing {key}");
            }
        }
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::EmptyInput("x".into())), 2);
        assert_eq!(exit_code(&Error::BackendUnavailable("x".into())), 3);
        assert_eq!(exit_code(&Error::DegenerateLabels), 4);
        let v: serde_json::Value = serde_json::from_str(&error_json(&Error::EmptyInput("x".into()))).unwrap();
        assert_eq!(v["error"], "EmptyInput");
    }
}
