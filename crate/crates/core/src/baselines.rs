//! Reference scorers: entity overlap and whole-document NLI.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nli::NliBackend;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entity {
    pub text: String,
    #[serde(rename = "type")]
    pub kind: String,
}

pub trait EntityExtractor: Send + Sync {
    fn extract(&self, text: &str) -> Result<Vec<Entity>>;
}

/// Entity types counted as potential hallucinations by default.
pub fn default_entity_types() -> BTreeSet<String> {
    [
        "PERSON", "PER", "ORG", "ORGANIZATION", "GPE", "LOC", "LOCATION", "NORP", "FAC", "EVENT",
        "PRODUCT", "PROPN",
    ]
    .into_iter()
    .map(str::to_string)
    .collect()
}

const CAPITALIZED_STOPWORDS: &[&str] = &[
    "A", "An", "The", "This", "That", "These", "Those", "He", "She", "It", "They", "We", "I",
    "You", "His", "Her", "Its", "Their", "Our", "My", "In", "On", "At", "By", "For", "From", "To",
    "Of", "With", "As", "But", "And", "Or", "If", "When", "While", "After", "Before", "Since",
    "There", "Here", "Then", "Yesterday", "Today", "Tomorrow", "However", "Meanwhile", "Also",
];

/// Capitalized-token-sequence heuristic. Every maximal run of capitalized
/// words (leading function words removed) is reported with type `PROPN`.
#[derive(Debug, Clone, Default)]
pub struct RuleExtractor;

impl EntityExtractor for RuleExtractor {
    fn extract(&self, text: &str) -> Result<Vec<Entity>> {
        let mut out = Vec::new();
        let mut run: Vec<String> = Vec::new();
        let mut flush = |run: &mut Vec<String>| {
            while run
                .first()
                .is_some_and(|w| CAPITALIZED_STOPWORDS.contains(&w.as_str()))
            {
                run.remove(0);
            }
            if !run.is_empty() {
                out.push(Entity {
                    text: run.join(" "),
                    kind: "PROPN".into(),
                });
            }
            run.clear();
        };
        for raw in text.split_whitespace() {
            let word = raw.trim_matches(|c: char| !c.is_alphanumeric());
            let capitalized = word.chars().next().is_some_and(char::is_uppercase);
            if capitalized {
                run.push(word.to_string());
            } else {
                flush(&mut run);
            }
            // punctuation after a word closes the run
            if raw.ends_with(|c: char| !c.is_alphanumeric()) {
                flush(&mut run);
            }
        }
        flush(&mut run);
        Ok(out)
    }
}

#[derive(Deserialize)]
struct ExtractorReply {
    entities: Vec<Entity>,
}

struct ChildIo {
    _child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Entity extractor running as a subprocess that speaks line-delimited JSON:
/// `{"text": ...}` in, `{"entities": [{"text", "type"}, ...]}` out.
pub struct ExternalExtractor {
    io: Mutex<ChildIo>,
}

impl ExternalExtractor {
    pub fn spawn(program: &str, args: &[&str]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::ExtractorUnavailable(format!("{program}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
        Ok(ExternalExtractor {
            io: Mutex::new(ChildIo {
                _child: child,
                stdin,
                stdout,
            }),
        })
    }
}

impl Drop for ExternalExtractor {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            let _ = io._child.kill();
            let _ = io._child.wait();
        }
    }
}

impl EntityExtractor for ExternalExtractor {
    fn extract(&self, text: &str) -> Result<Vec<Entity>> {
        let unavailable = |e: &dyn std::fmt::Display| Error::ExtractorUnavailable(e.to_string());
        let mut io = self.io.lock().map_err(|e| unavailable(&e))?;
        let mut request = serde_json::to_string(&serde_json::json!({ "text": text }))?;
        request.push('\n');
        io.stdin.write_all(request.as_bytes()).map_err(|e| unavailable(&e))?;
        io.stdin.flush().map_err(|e| unavailable(&e))?;
        let mut line = String::new();
        let read = io.stdout.read_line(&mut line).map_err(|e| unavailable(&e))?;
        if read == 0 {
            return Err(Error::ExtractorUnavailable("extractor closed its output".into()));
        }
        let reply: ExtractorReply = serde_json::from_str(&line)
            .map_err(|e| Error::ExtractorUnavailable(format!("bad extractor reply: {e}")))?;
        Ok(reply.entities)
    }
}

/// 1 when every summary entity of a tracked type also appears among the
/// document's entities (case-folded exact match), else 0.
pub fn ner_overlap_score(
    document: &str,
    summary: &str,
    extractor: &dyn EntityExtractor,
    types: &BTreeSet<String>,
) -> Result<f64> {
    if document.trim().is_empty() || summary.trim().is_empty() {
        return Err(Error::EmptyInput("document and summary must be non-empty".into()));
    }
    let doc_entities: BTreeSet<String> = extractor
        .extract(document)?
        .into_iter()
        .map(|e| e.text.to_lowercase())
        .collect();
    let hallucinated = extractor
        .extract(summary)?
        .into_iter()
        .filter(|e| types.contains(&e.kind.to_uppercase()))
        .any(|e| !doc_entities.contains(&e.text.to_lowercase()));
    Ok(if hallucinated { 0.0 } else { 1.0 })
}

/// Entailment probability of the whole summary given the whole document.
pub fn mnli_doc_score(document: &str, summary: &str, backend: &dyn NliBackend) -> Result<f64> {
    let (d, s) = (document.trim(), summary.trim());
    if d.is_empty() || s.is_empty() {
        return Err(Error::EmptyInput("document and summary must be non-empty".into()));
    }
    let probs = backend.score_pairs(&[(d, s)])?;
    probs
        .first()
        .map(|p| p.e)
        .ok_or_else(|| Error::BackendUnavailable("backend returned no result".into()))
}
