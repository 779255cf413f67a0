//! NLI backends: anything that maps (premise, hypothesis) pairs to
//! entailment / contradiction / neutral probabilities.
//!
//! Three implementations ship with the crate:
//! - [`MockBackend`], a deterministic token-overlap oracle used in tests,
//! - [`FixtureBackend`], a lookup table loaded from a JSON fixture file,
//! - [`RemoteBackend`], an HTTP client for an inference service speaking the
//!   `POST /nli` protocol.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `e + c + n = 1`.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

/// Probability triple over (entailment, contradiction, neutral).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliProbs {
    pub e: f64,
    pub c: f64,
    pub n: f64,
}

impl NliProbs {
    pub fn new(e: f64, c: f64, n: f64) -> Result<Self> {
        let p = NliProbs { e, c, n };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for v in [self.e, self.c, self.n] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidProbs(format!("component {v} outside [0, 1]")));
            }
        }
        let sum = self.e + self.c + self.n;
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::InvalidProbs(format!("components sum to {sum}")));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.e, self.c, self.n]
    }
}

/// Name and version of a backend; both participate in cache keys.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackendId {
    pub name: String,
    pub version: String,
}

impl BackendId {
    pub fn new(name: impl Into<String>, version: impl Into<String>) -> Result<Self> {
        let id = BackendId {
            name: name.into(),
            version: version.into(),
        };
        if id.name.trim().is_empty() || id.version.trim().is_empty() {
            return Err(Error::Config("backend name and version must be non-empty".into()));
        }
        Ok(id)
    }
}

impl std::fmt::Display for BackendId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}", self.name, self.version)
    }
}

pub trait NliBackend: Send + Sync {
    fn id(&self) -> &BackendId;

    /// Scores each `(premise, hypothesis)` pair; output is aligned with input.
    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<NliProbs>>;
}

impl<B: NliBackend + ?Sized> NliBackend for std::sync::Arc<B> {
    fn id(&self) -> &BackendId {
        (**self).id()
    }

    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<NliProbs>> {
        (**self).score_pairs(pairs)
    }
}

fn check_pairs(pairs: &[(&str, &str)]) -> Result<()> {
    match pairs
        .iter()
        .position(|(p, h)| p.trim().is_empty() || h.trim().is_empty())
    {
        Some(index) => Err(Error::EmptyPair { index }),
        None => Ok(()),
    }
}

/// Lowercased alphanumeric tokens; everything else separates.
pub fn mock_tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Deterministic stand-in for an NLI model: the entailment probability is
/// the fraction of the hypothesis' unique tokens found in the premise.
pub fn mock_score(premise: &str, hypothesis: &str) -> Result<NliProbs> {
    let hyp = mock_tokens(hypothesis);
    if hyp.is_empty() || premise.trim().is_empty() {
        return Err(Error::EmptyPair { index: 0 });
    }
    let prem = mock_tokens(premise);
    let r = hyp.intersection(&prem).count() as f64 / hyp.len() as f64;
    Ok(NliProbs {
        e: r,
        c: 0.1 * (1.0 - r),
        n: 0.9 * (1.0 - r),
    })
}

/// Backend computing [`mock_score`] for every pair.
///
/// An optional per-batch latency emulates model inference cost for
/// throughput experiments; it never changes the returned probabilities.
#[derive(Debug, Clone)]
pub struct MockBackend {
    id: BackendId,
    batch_size: usize,
    batch_latency: Duration,
}

impl Default for MockBackend {
    fn default() -> Self {
        MockBackend::new()
    }
}

impl MockBackend {
    pub fn new() -> Self {
        MockBackend {
            id: BackendId {
                name: "mock-overlap".into(),
                version: "1".into(),
            },
            batch_size: 64,
            batch_latency: Duration::ZERO,
        }
    }

    pub fn with_latency(mut self, batch_latency: Duration, batch_size: usize) -> Self {
        self.batch_latency = batch_latency;
        self.batch_size = batch_size.max(1);
        self
    }
}

impl NliBackend for MockBackend {
    fn id(&self) -> &BackendId {
        &self.id
    }

    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<NliProbs>> {
        check_pairs(pairs)?;
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(self.batch_size) {
            if !self.batch_latency.is_zero() {
                thread::sleep(self.batch_latency);
            }
            for (i, (p, h)) in chunk.iter().enumerate() {
                out.push(mock_score(p, h).map_err(|_| Error::EmptyPair {
                    index: out.len() + i,
                })?);
            }
        }
        Ok(out)
    }
}

/// One scored pair in a fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub premise: String,
    pub hypothesis: String,
    pub e: f64,
    pub c: f64,
    pub n: f64,
}

/// On-disk fixture: `{"backend":{"name","version"},"entries":[...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureFile {
    pub backend: BackendId,
    pub entries: Vec<FixtureEntry>,
}

impl FixtureFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let raw = serde_json::to_string_pretty(self)?;
        fs::write(path, raw).map_err(|e| Error::io(path, e))
    }

    pub fn push(&mut self, premise: &str, hypothesis: &str, probs: NliProbs) {
        self.entries.push(FixtureEntry {
            premise: premise.to_string(),
            hypothesis: hypothesis.to_string(),
            e: probs.e,
            c: probs.c,
            n: probs.n,
        });
    }
}

/// Lookup-table backend over a [`FixtureFile`].
#[derive(Debug, Clone)]
pub struct FixtureBackend {
    id: BackendId,
    table: HashMap<(String, String), NliProbs>,
}

impl FixtureBackend {
    pub fn new(fixture: FixtureFile) -> Result<Self> {
        let mut table = HashMap::with_capacity(fixture.entries.len());
        for entry in fixture.entries {
            let probs = NliProbs::new(entry.e, entry.c, entry.n)?;
            let key = (entry.premise, entry.hypothesis);
            if let Some(prev) = table.insert(key.clone(), probs) {
                if prev != probs {
                    return Err(Error::Config(format!(
                        "fixture has conflicting entries for premise {:?}, hypothesis {:?}",
                        key.0, key.1
                    )));
                }
            }
        }
        Ok(FixtureBackend {
            id: fixture.backend,
            table,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        FixtureBackend::new(FixtureFile::load(path)?)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl NliBackend for FixtureBackend {
    fn id(&self) -> &BackendId {
        &self.id
    }

    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<NliProbs>> {
        check_pairs(pairs)?;
        pairs
            .iter()
            .map(|(p, h)| {
                self.table
                    .get(&(p.to_string(), h.to_string()))
                    .copied()
                    .ok_or_else(|| Error::FixtureMiss {
                        premise: p.to_string(),
                        hypothesis: h.to_string(),
                    })
            })
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WirePair {
    pub premise: String,
    pub hypothesis: String,
}

/// Body of `POST /nli`.
#[derive(Debug, Serialize, Deserialize)]
pub struct NliRequest {
    pub pairs: Vec<WirePair>,
}

/// Response of `POST /nli`; `probs[i]` is `[e, c, n]` for `pairs[i]`.
#[derive(Debug, Serialize, Deserialize)]
pub struct NliResponse {
    pub probs: Vec<[f64; 3]>,
}

/// Response of `GET /health`.
#[derive(Debug, Serialize, Deserialize)]
pub struct HealthResponse {
    pub model: String,
    pub ready: bool,
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Base URL of the service, e.g. `http://127.0.0.1:8080`.
    pub endpoint: String,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            batch_size: 64,
            max_in_flight: 4,
            timeout: Duration::from_secs(120),
        }
    }
}

/// HTTP client for an NLI inference service.
///
/// Pairs are sent in batches of `batch_size`, with at most `max_in_flight`
/// concurrent requests. A failed batch is retried once.
pub struct RemoteBackend {
    id: BackendId,
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

enum Attempt {
    Retryable(String),
    Fatal(String),
}

impl RemoteBackend {
    pub fn new(id: BackendId, config: RemoteConfig) -> Result<Self> {
        if config.batch_size == 0 || config.max_in_flight == 0 {
            return Err(Error::Config(
                "remote batch_size and max_in_flight must be at least 1".into(),
            ));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::BackendUnavailable(e.to_string()))?;
        Ok(RemoteBackend { id, config, client })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    pub fn health(&self) -> Result<HealthResponse> {
        let url = format!("{}/health", self.config.endpoint);
        let resp = self
            .client
            .get(&url)
            .send()
            .map_err(|e| Error::BackendUnavailable(format!("{url}: {e}")))?;
        resp.json()
            .map_err(|e| Error::BackendUnavailable(format!("{url}: {e}")))
    }

    /// Polls `/health` until the service reports a loaded model.
    pub fn wait_until_ready(&self, timeout: Duration) -> Result<()> {
        let deadline = Instant::now() + timeout;
        loop {
            match self.health() {
                Ok(h) if h.ready => return Ok(()),
                Ok(_) | Err(_) if Instant::now() < deadline => {
                    thread::sleep(Duration::from_millis(50))
                }
                Ok(h) => {
                    return Err(Error::BackendUnavailable(format!(
                        "model {} not ready after {timeout:?}",
                        h.model
                    )))
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn post_once(&self, batch: &[(&str, &str)]) -> std::result::Result<Vec<NliProbs>, Attempt> {
        let url = format!("{}/nli", self.config.endpoint);
        let body = NliRequest {
            pairs: batch
                .iter()
                .map(|(p, h)| WirePair {
                    premise: p.to_string(),
                    hypothesis: h.to_string(),
                })
                .collect(),
        };
        let resp = self
            .client
            .post(&url)
            .json(&body)
            .send()
            .map_err(|e| Attempt::Retryable(format!("{url}: {e}")))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(Attempt::Retryable(format!("{url}: HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Attempt::Fatal(format!("{url}: HTTP {status}: {text}")));
        }
        let parsed: NliResponse = resp
            .json()
            .map_err(|e| Attempt::Fatal(format!("{url}: bad response body: {e}")))?;
        if parsed.probs.len() != batch.len() {
            return Err(Attempt::Fatal(format!(
                "{url}: expected {} probability triples, got {}",
                batch.len(),
                parsed.probs.len()
            )));
        }
        parsed
            .probs
            .iter()
            .map(|&[e, c, n]| NliProbs::new(e, c, n).map_err(|err| Attempt::Fatal(err.to_string())))
            .collect()
    }

    fn post_batch(&self, batch: &[(&str, &str)]) -> Result<Vec<NliProbs>> {
        match self.post_once(batch) {
            Ok(v) => Ok(v),
            Err(Attempt::Fatal(msg)) => Err(Error::BackendUnavailable(msg)),
            Err(Attempt::Retryable(first)) => {
                log::warn!("NLI batch failed ({first}), retrying once");
                self.post_once(batch).map_err(|a| match a {
                    Attempt::Retryable(m) | Attempt::Fatal(m) => Error::BackendUnavailable(m),
                })
            }
        }
    }
}

impl NliBackend for RemoteBackend {
    fn id(&self) -> &BackendId {
        &self.id
    }

    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<NliProbs>> {
        check_pairs(pairs)?;
        let batches: Vec<&[(&str, &str)]> = pairs.chunks(self.config.batch_size).collect();
        if batches.len() <= 1 {
            return batches.first().map_or(Ok(Vec::new()), |b| self.post_batch(b));
        }
        let results: Vec<Mutex<Option<Result<Vec<NliProbs>>>>> =
            batches.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.config.max_in_flight.min(batches.len());
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= batches.len() {
                        break;
                    }
                    let r = self.post_batch(batches[i]);
                    let failed = r.is_err();
                    *results[i].lock().unwrap() = Some(r);
                    if failed {
                        // stop handing out work
                        next.store(batches.len(), Ordering::SeqCst);
                    }
                });
            }
        });
        let mut out = Vec::with_capacity(pairs.len());
        for slot in results {
            match slot.into_inner().unwrap() {
                Some(Ok(v)) => out.extend(v),
                Some(Err(e)) => return Err(e),
                None => {}
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: NliProbs, b: (f64, f64, f64)) -> bool {
        (a.e - b.0).abs() < 1e-12 && (a.c - b.1).abs() < 1e-12 && (a.n - b.2).abs() < 1e-12
    }

    #[test]
    fn mock_formula_examples() {
        assert!(close(mock_score("x", "x").unwrap(), (1.0, 0.0, 0.0)));
        assert!(close(mock_score("a b", "c d").unwrap(), (0.0, 0.1, 0.9)));
        assert!(close(mock_score("a b c d e f g h", "a b c d").unwrap(), (1.0, 0.0, 0.0)));
        assert!(close(mock_score("a b c d", "a b x y").unwrap(), (0.5, 0.05, 0.45)));
        assert!(close(mock_score("the cat sat", "the cat sat").unwrap(), (1.0, 0.0, 0.0)));
    }

    #[test]
    fn mock_rejects_tokenless_hypothesis() {
        assert!(matches!(mock_score("a", "?!"), Err(Error::EmptyPair { .. })));
        let b = MockBackend::new();
        assert!(matches!(
            b.score_pairs(&[("a", "a"), ("b", "")]),
            Err(Error::EmptyPair { index: 1 })
        ));
    }

    #[test]
    fn mock_is_case_and_punctuation_insensitive() {
        let a = mock_score("The Cat, sat.", "cat THE").unwrap();
        assert_eq!(a.e, 1.0);
    }

    #[test]
    fn simplex_validation() {
        assert!(NliProbs::new(0.5, 0.25, 0.25).is_ok());
        assert!(NliProbs::new(0.5, 0.25, 0.3).is_err());
        assert!(NliProbs::new(1.2, -0.1, -0.1).is_err());
        assert!(BackendId::new("", "1").is_err());
    }

    #[test]
    fn fixture_lookup_and_miss() {
        let mut f = FixtureFile {
            backend: BackendId::new("fx", "1").unwrap(),
            entries: vec![],
        };
        f.push("p", "h", NliProbs::new(0.98, 0.01, 0.01).unwrap());
        let b = FixtureBackend::new(f).unwrap();
        assert_eq!(b.score_pairs(&[("p", "h")]).unwrap()[0].e, 0.98);
        assert!(matches!(
            b.score_pairs(&[("p", "other")]),
            Err(Error::FixtureMiss { .. })
        ));
    }

    #[test]
    fn fixture_rejects_conflicts_and_bad_probs() {
        let id = BackendId::new("fx", "1").unwrap();
        let entry = |e: f64| FixtureEntry {
            premise: "p".into(),
            hypothesis: "h".into(),
            e,
            c: 0.0,
            n: 1.0 - e,
        };
        let conflicting = FixtureFile {
            backend: id.clone(),
            entries: vec![entry(0.1), entry(0.2)],
        };
        assert!(FixtureBackend::new(conflicting).is_err());
        let bad = FixtureFile {
            backend: id,
            entries: vec![FixtureEntry {
                premise: "p".into(),
                hypothesis: "h".into(),
                e: 0.9,
                c: 0.9,
                n: 0.9,
            }],
        };
        assert!(matches!(FixtureBackend::new(bad), Err(Error::InvalidProbs(_))));
    }

    #[test]
    fn remote_unreachable_is_backend_error() {
        let mut cfg = RemoteConfig::new("http://127.0.0.1:9");
        cfg.timeout = Duration::from_millis(500);
        let b = RemoteBackend::new(BackendId::new("remote", "1").unwrap(), cfg).unwrap();
        assert!(matches!(
            b.score_pairs(&[("a", "b")]),
            Err(Error::BackendUnavailable(_))
        ));
    }
}
