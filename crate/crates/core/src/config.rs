//! Run configuration shared by the command-line workflows.
//!
//! A configuration is a JSON object; every key is optional and unknown keys
//! are rejected. Command-line flags override file values.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::aggregator::Operator;
use crate::datasets::MappingOptions;
use crate::error::{Error, Result};
use crate::matrix::{CategorySet, MatrixCache};
use crate::nli::{BackendId, FixtureBackend, MockBackend, NliBackend, RemoteBackend, RemoteConfig};
use crate::segmenter::{Granularity, Side};
use crate::trainer::TrainConfig;

/// Environment variable overriding `cache_dir`.
pub const CACHE_DIR_ENV: &str = "NLI_CONSISTENCY_CACHE_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Fixture,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub fixture: Option<PathBuf>,
    pub endpoint: Option<String>,
    /// Identity of a remote model, used in cache keys.
    pub name: String,
    pub version: String,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    /// Wait for the remote service's health check before the first batch.
    pub wait_ready_secs: Option<u64>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            fixture: None,
            endpoint: None,
            name: "remote-nli".into(),
            version: "1".into(),
            batch_size: 64,
            max_in_flight: 4,
            timeout_secs: 120,
            wait_ready_secs: None,
        }
    }
}

impl BackendConfig {
    pub fn build(&self) -> Result<Arc<dyn NliBackend>> {
        match self.kind {
            BackendKind::Mock => Ok(Arc::new(MockBackend::new())),
            BackendKind::Fixture => {
                let path = self
                    .fixture
                    .as_ref()
                    .ok_or_else(|| Error::Config("fixture backend needs backend.fixture".into()))?;
                Ok(Arc::new(FixtureBackend::load(path)?))
            }
            BackendKind::Remote => {
                let endpoint = self
                    .endpoint
                    .as_ref()
                    .ok_or_else(|| Error::Config("remote backend needs backend.endpoint".into()))?;
                let mut cfg = RemoteConfig::new(endpoint.as_str());
                cfg.batch_size = self.batch_size;
                cfg.max_in_flight = self.max_in_flight;
                cfg.timeout = Duration::from_secs(self.timeout_secs);
                let backend = RemoteBackend::new(BackendId::new(&self.name, &self.version)?, cfg)?;
                if let Some(secs) = self.wait_ready_secs {
                    backend.wait_until_ready(Duration::from_secs(secs))?;
                }
                Ok(Arc::new(backend))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSettings {
    pub n_resamples: usize,
    pub alphas: Vec<f64>,
    /// Index (in `--scorer` order) of the scorer others are tested against.
    pub reference: usize,
    pub throughput: bool,
    pub warmup_docs: usize,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        BenchmarkSettings {
            n_resamples: 10_000,
            alphas: vec![0.05, 0.01],
            reference: 0,
            throughput: false,
            warmup_docs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendConfig,
    pub doc_granularity: Granularity,
    pub sum_granularity: Granularity,
    pub op1: Operator,
    pub op2: Operator,
    pub cats: CategorySet,
    pub h: usize,
    pub normalize_histograms: bool,
    pub cache_dir: Option<PathBuf>,
    pub seed: u64,
    pub workers: Option<usize>,
    pub train: TrainConfig,
    pub mapping: MappingOptions,
    pub benchmark: BenchmarkSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backend: BackendConfig::default(),
            doc_granularity: Granularity::Sentence,
            sum_granularity: Granularity::Sentence,
            op1: Operator::Max,
            op2: Operator::Mean,
            cats: CategorySet::ENTAILMENT,
            h: 50,
            normalize_histograms: true,
            cache_dir: None,
            seed: 0,
            workers: None,
            train: TrainConfig::default(),
            mapping: MappingOptions::default(),
            benchmark: BenchmarkSettings::default(),
        }
    }
}

/// Every accepted configuration key, for help texts.
pub const CONFIG_KEYS: &[&str] = &[
    "backend.kind (mock|fixture|remote)",
    "backend.fixture",
    "backend.endpoint",
    "backend.name",
    "backend.version",
    "backend.batch_size",
    "backend.max_in_flight",
    "backend.timeout_secs",
    "backend.wait_ready_secs",
    "doc_granularity (full|paragraph|two_sentence|sentence)",
    "sum_granularity (full|sentence)",
    "op1 (min|mean|max)",
    "op2 (min|mean|max)",
    "cats (list of \"E\", \"N\", \"C\")",
    "h",
    "normalize_histograms",
    "cache_dir",
    "seed",
    "workers",
    "train.batch_size",
    "train.learning_rate",
    "train.max_epochs",
    "train.adam_beta1",
    "train.adam_beta2",
    "train.adam_eps",
    "train.seed",
    "train.subsample_size",
    "train.patience",
    "train.validation_threshold",
    "mapping.polytope_accuracy_errors",
    "mapping.polytope_fluency_errors",
    "mapping.frank_majority (\"strict\" | {\"at_least\": k})",
    "benchmark.n_resamples",
    "benchmark.alphas",
    "benchmark.reference",
    "benchmark.throughput",
    "benchmark.warmup_docs",
];

pub fn config_keys_help() -> String {
    let mut s = String::from("Configuration keys (JSON file via --config; flags override):\n");
    for k in CONFIG_KEYS {
        s.push_str("  ");
        s.push_str(k);
        s.push('\n');
    }
    s.push_str(&format!("Environment: {CACHE_DIR_ENV} overrides cache_dir.\n"));
    s
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.sum_granularity.allowed_for(Side::Summary) {
            return Err(Error::UnsupportedGranularity {
                granularity: self.sum_granularity.to_string(),
                side: Side::Summary.to_string(),
            });
        }
        if self.h < 2 {
            return Err(Error::Config(format!("h must be at least 2, got {}", self.h)));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.benchmark.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::Config("benchmark.alphas must lie in (0, 1)".into()));
        }
        self.train.validate()
    }

    /// `cache_dir` from the environment (if set) or the configuration.
    pub fn resolved_cache_dir(&self) -> Option<PathBuf> {
        std::env::var_os(CACHE_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .or_else(|| self.cache_dir.clone())
    }

    pub fn matrix_cache(&self) -> Result<Option<MatrixCache>> {
        self.resolved_cache_dir()
            .map(|dir| MatrixCache::open(dir.join("matrices")))
            .transpose()
    }

    pub fn workers(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"op1": "max", "bins": 10}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"backend": {"kind": "mock", "url": "x"}}"#).is_err());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"op2": "max", "cats": ["E", "C"], "train": {"max_epochs": 3}}"#).unwrap();
        assert_eq!(cfg.op2, Operator::Max);
        assert_eq!(cfg.op1, Operator::Max);
        assert_eq!(cfg.train.max_epochs, 3);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.cats.len(), 2);
        cfg.validate().unwrap();
    }

    #[test]
    fn validation_catches_bad_values() {
        let cfg = RunConfig {
            sum_granularity: Granularity::Paragraph,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            h: 1,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn help_lists_every_top_level_key() {
        let value = serde_json::to_value(RunConfig::default()).unwrap();
        let help = config_keys_help();
        for key in value.as_object().unwrap().keys() {
            assert!(help.contains(key.as_str()), "missing {key}");
        }
        for section in ["backend", "train", "benchmark", "mapping"] {
            for key in value[section].as_object().unwrap().keys() {
                assert!(help.contains(&format!("{section}.{key}")), "missing {section}.{key}");
            }
        }
    }
}
