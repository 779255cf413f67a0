//! Standardizing consistency-annotation datasets into binary benchmark samples.
//!
//! Raw inputs are JSONL files, one record per line, with the common fields
//! `id`, `document`, `summary` and (for datasets with an official split)
//! `split`, plus the dataset-specific annotation fields below:
//!
//! | rule        | annotation field                         | consistent when                       |
//! |-------------|------------------------------------------|---------------------------------------|
//! | `cogensumm` | `correct`: bool                          | `correct` is true                     |
//! | `xsumfaith` | `hallucinations`: list of `"extrinsic"` / `"intrinsic"` | the list is empty      |
//! | `polytope`  | `errors`: list of error-type names       | no accuracy error is listed           |
//! | `factcc`    | `label`: `"CORRECT"` / `"INCORRECT"`     | `CORRECT`                             |
//! | `summeval`  | `consistency`: list of 1-5 scores        | every annotator gave 5                |
//! | `frank`     | `annotator_errors`: list (per annotator) of error lists | a majority listed no error |
//! | `passthrough` | `label`: 0 / 1                         | `label` is 1                          |

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::metrics::fleiss_kappa;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Validation,
    Test,
}

impl Split {
    fn parse(raw: &str) -> Option<Split> {
        match raw.to_ascii_lowercase().as_str() {
            "validation" | "valid" | "val" | "dev" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

mod label_int {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(label: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*label as u8)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

/// One standardized (document, summary, label) sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSample {
    pub id: String,
    pub dataset: String,
    pub split: Split,
    pub document: String,
    pub summary: String,
    /// `true` = consistent; written as 1 / 0.
    #[serde(with = "label_int")]
    pub label: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingRule {
    CoGenSumm,
    XSumFaith,
    Polytope,
    FactCC,
    SummEval,
    Frank,
    PassThrough,
}

impl MappingRule {
    pub const ALL: [MappingRule; 7] = [
        MappingRule::CoGenSumm,
        MappingRule::XSumFaith,
        MappingRule::Polytope,
        MappingRule::FactCC,
        MappingRule::SummEval,
        MappingRule::Frank,
        MappingRule::PassThrough,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MappingRule::CoGenSumm => "cogensumm",
            MappingRule::XSumFaith => "xsumfaith",
            MappingRule::Polytope => "polytope",
            MappingRule::FactCC => "factcc",
            MappingRule::SummEval => "summeval",
            MappingRule::Frank => "frank",
            MappingRule::PassThrough => "passthrough",
        }
    }
}

impl fmt::Display for MappingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MappingRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['-', '_'], "");
        MappingRule::ALL
            .into_iter()
            .find(|r| r.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown dataset {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub mapping_rule: MappingRule,
    pub has_official_split: bool,
}

impl DatasetSpec {
    /// Built-in spec for one of the known datasets.
    pub fn builtin(rule: MappingRule) -> Self {
        let has_official_split = matches!(
            rule,
            MappingRule::CoGenSumm | MappingRule::FactCC | MappingRule::Frank
        );
        DatasetSpec {
            name: rule.name().to_string(),
            mapping_rule: rule,
            has_official_split,
        }
    }
}

/// How many "no error" votes make a FRANK summary consistent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Majority {
    /// More than half of the annotators.
    Strict,
    AtLeast(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingOptions {
    pub polytope_accuracy_errors: Vec<String>,
    pub polytope_fluency_errors: Vec<String>,
    pub frank_majority: Majority,
}

impl Default for MappingOptions {
    fn default() -> Self {
        let names = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        MappingOptions {
            polytope_accuracy_errors: names(&[
                "addition",
                "omission",
                "inaccuracy_intrinsic",
                "inaccuracy_extrinsic",
                "positive_negative_aspect",
            ]),
            polytope_fluency_errors: names(&["duplication", "word_form", "word_order"]),
            frank_majority: Majority::Strict,
        }
    }
}

fn normalize_name(s: &str) -> String {
    s.trim()
        .to_ascii_lowercase()
        .replace([' ', '-', '/'], "_")
}

fn field<'a>(id: &str, raw: &'a Value, name: &str) -> Result<&'a Value> {
    raw.get(name).ok_or_else(|| Error::SchemaMismatch {
        id: id.to_string(),
        reason: format!("missing field {name:?}"),
    })
}

fn mismatch(id: &str, reason: impl Into<String>) -> Error {
    Error::SchemaMismatch {
        id: id.to_string(),
        reason: reason.into(),
    }
}

fn string_list(id: &str, v: &Value, name: &str) -> Result<Vec<String>> {
    v.as_array()
        .ok_or_else(|| mismatch(id, format!("{name:?} must be a list")))?
        .iter()
        .map(|x| {
            x.as_str()
                .map(str::to_string)
                .ok_or_else(|| mismatch(id, format!("{name:?} must hold strings")))
        })
        .collect()
}

/// Maps a raw annotation record to a binary label (`true` = consistent).
pub fn map_label(rule: MappingRule, id: &str, raw: &Value, opts: &MappingOptions) -> Result<bool> {
    match rule {
        MappingRule::CoGenSumm => field(id, raw, "correct")?
            .as_bool()
            .ok_or_else(|| mismatch(id, "\"correct\" must be a boolean")),
        MappingRule::XSumFaith => {
            let kinds = string_list(id, field(id, raw, "hallucinations")?, "hallucinations")?;
            for k in &kinds {
                if !matches!(normalize_name(k).as_str(), "extrinsic" | "intrinsic") {
                    return Err(mismatch(id, format!("unknown hallucination type {k:?}")));
                }
            }
            Ok(kinds.is_empty())
        }
        MappingRule::Polytope => {
            let accuracy: Vec<String> =
                opts.polytope_accuracy_errors.iter().map(|s| normalize_name(s)).collect();
            let fluency: Vec<String> =
                opts.polytope_fluency_errors.iter().map(|s| normalize_name(s)).collect();
            let mut consistent = true;
            for e in string_list(id, field(id, raw, "errors")?, "errors")? {
                let e = normalize_name(&e);
                if accuracy.contains(&e) {
                    consistent = false;
                } else if !fluency.contains(&e) {
                    return Err(mismatch(id, format!("unknown error type {e:?}")));
                }
            }
            Ok(consistent)
        }
        MappingRule::FactCC => match field(id, raw, "label")?.as_str() {
            Some(l) if l.eq_ignore_ascii_case("correct") => Ok(true),
            Some(l) if l.eq_ignore_ascii_case("incorrect") => Ok(false),
            _ => Err(mismatch(id, "\"label\" must be \"CORRECT\" or \"INCORRECT\"")),
        },
        MappingRule::SummEval => {
            let scores = field(id, raw, "consistency")?
                .as_array()
                .ok_or_else(|| mismatch(id, "\"consistency\" must be a list"))?;
            if scores.is_empty() {
                return Err(mismatch(id, "\"consistency\" has no annotator scores"));
            }
            let mut all_five = true;
            for s in scores {
                match s.as_f64() {
                    Some(v) if (1.0..=5.0).contains(&v) => all_five &= v == 5.0,
                    _ => return Err(mismatch(id, "consistency scores must be numbers in [1, 5]")),
                }
            }
            Ok(all_five)
        }
        MappingRule::Frank => {
            let annotators = field(id, raw, "annotator_errors")?
                .as_array()
                .ok_or_else(|| mismatch(id, "\"annotator_errors\" must be a list"))?;
            if annotators.is_empty() {
                return Err(mismatch(id, "\"annotator_errors\" has no annotators"));
            }
            let mut no_error = 0;
            for a in annotators {
                if string_list(id, a, "annotator_errors")?.is_empty() {
                    no_error += 1;
                }
            }
            Ok(match opts.frank_majority {
                Majority::Strict => 2 * no_error > annotators.len(),
                Majority::AtLeast(k) => no_error >= k,
            })
        }
        MappingRule::PassThrough => match field(id, raw, "label")?.as_u64() {
            Some(0) => Ok(false),
            Some(1) => Ok(true),
            _ => Err(mismatch(id, "\"label\" must be 0 or 1")),
        },
    }
}

/// Even positions go to validation, odd ones to test; order is kept.
pub fn split_even_odd<T: Clone>(items: &[T]) -> (Vec<T>, Vec<T>) {
    let validation = items.iter().step_by(2).cloned().collect();
    let test = items.iter().skip(1).step_by(2).cloned().collect();
    (validation, test)
}

fn read_jsonl(path: &Path) -> Result<Vec<Value>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

fn text_field(raw: &Value, name: &str) -> Option<String> {
    raw.get(name)
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
}

/// Standardizes already-parsed raw records of one dataset.
///
/// Records with a missing document or an empty summary are dropped with a
/// warning; any annotation that does not fit the rule is an error.
pub fn standardize(
    spec: &DatasetSpec,
    records: &[Value],
    opts: &MappingOptions,
) -> Result<Vec<BenchmarkSample>> {
    let mut kept: Vec<(BenchmarkSample, Option<Split>)> = Vec::with_capacity(records.len());
    for (i, raw) in records.iter().enumerate() {
        let id = match raw.get("id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => format!("{}-{i}", spec.name),
        };
        let (Some(document), Some(summary)) = (text_field(raw, "document"), text_field(raw, "summary"))
        else {
            log::warn!("{}: dropping record {id}: missing document or empty summary", spec.name);
            continue;
        };
        let label = map_label(spec.mapping_rule, &id, raw, opts)?;
        let split = if spec.has_official_split {
            let s = raw
                .get("split")
                .and_then(Value::as_str)
                .ok_or_else(|| mismatch(&id, "missing official \"split\""))?;
            Some(Split::parse(s).ok_or_else(|| mismatch(&id, format!("unknown split {s:?}")))?)
        } else {
            None
        };
        let mut annotations = raw.clone();
        if let Value::Object(map) = &mut annotations {
            for k in ["id", "document", "summary", "split"] {
                map.remove(k);
            }
        }
        kept.push((
            BenchmarkSample {
                id,
                dataset: spec.name.clone(),
                split: Split::Validation,
                document,
                summary,
                label,
                annotations: Some(annotations),
            },
            split,
        ));
    }
    if spec.has_official_split {
        Ok(kept
            .into_iter()
            .map(|(mut s, split)| {
                s.split = split.expect("official split parsed above");
                s
            })
            .collect())
    } else {
        Ok(kept
            .into_iter()
            .enumerate()
            .map(|(i, (mut s, _))| {
                s.split = if i % 2 == 0 { Split::Validation } else { Split::Test };
                s
            })
            .collect())
    }
}

/// Reads a raw dataset file and standardizes it.
pub fn ingest(spec: &DatasetSpec, path: impl AsRef<Path>, opts: &MappingOptions) -> Result<Vec<BenchmarkSample>> {
    standardize(spec, &read_jsonl(path.as_ref())?, opts)
}

/// Writes samples as canonical benchmark JSONL.
pub fn write_benchmark(path: impl AsRef<Path>, samples: &[BenchmarkSample], with_annotations: bool) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for s in samples {
        let line = if with_annotations {
            serde_json::to_string(s)?
        } else {
            serde_json::to_string(&BenchmarkSample {
                annotations: None,
                ..s.clone()
            })?
        };
        out.push_str(&line);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_benchmark(path: impl AsRef<Path>) -> Result<Vec<BenchmarkSample>> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Groups samples by dataset name, keeping file order inside each group.
pub fn by_dataset(samples: &[BenchmarkSample]) -> BTreeMap<String, Vec<BenchmarkSample>> {
    let mut out: BTreeMap<String, Vec<BenchmarkSample>> = BTreeMap::new();
    for s in samples {
        out.entry(s.dataset.clone()).or_default().push(s.clone());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub validation: usize,
    pub test: usize,
    pub positives: usize,
    pub percent_positive: f64,
}

pub fn dataset_stats(samples: &[BenchmarkSample]) -> Result<DatasetStats> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples".into()));
    }
    let validation = samples.iter().filter(|s| s.split == Split::Validation).count();
    let positives = samples.iter().filter(|s| s.label).count();
    Ok(DatasetStats {
        validation,
        test: samples.len() - validation,
        positives,
        percent_positive: 100.0 * positives as f64 / samples.len() as f64,
    })
}

/// Fleiss' kappa of the raw annotations, for datasets with several annotators
/// per summary (SummEval consistency scores, FRANK error / no-error votes).
/// Returns `None` for other rules or when annotations are absent.
pub fn annotation_agreement(rule: MappingRule, samples: &[BenchmarkSample]) -> Result<Option<f64>> {
    let mut table: Vec<Vec<u32>> = Vec::new();
    for s in samples {
        let Some(raw) = &s.annotations else { return Ok(None) };
        let row = match rule {
            MappingRule::SummEval => {
                let mut row = vec![0u32; 5];
                for v in field(&s.id, raw, "consistency")?.as_array().into_iter().flatten() {
                    let score = v.as_f64().ok_or_else(|| mismatch(&s.id, "non-numeric score"))?;
                    let bucket = (score.round() as usize).clamp(1, 5) - 1;
                    row[bucket] += 1;
                }
                row
            }
            MappingRule::Frank => {
                let mut row = vec![0u32; 2];
                for a in field(&s.id, raw, "annotator_errors")?.as_array().into_iter().flatten() {
                    let clean = a.as_array().is_some_and(|errs| errs.is_empty());
                    row[clean as usize] += 1;
                }
                row
            }
            _ => return Ok(None),
        };
        table.push(row);
    }
    if table.is_empty() {
        return Ok(None);
    }
    fleiss_kappa(&table).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn label(rule: MappingRule, raw: Value) -> Result<bool> {
        map_label(rule, "t", &raw, &MappingOptions::default())
    }

    #[test]
    fn summeval_requires_unanimous_fives() {
        assert!(label(MappingRule::SummEval, json!({"consistency": [5, 5, 5]})).unwrap());
        assert!(!label(MappingRule::SummEval, json!({"consistency": [5, 5, 4]})).unwrap());
        assert!(label(MappingRule::SummEval, json!({"consistency": [5, 7]})).is_err());
    }

    #[test]
    fn frank_majority() {
        let two_clean = json!({"annotator_errors": [[], ["OutE"], []]});
        let one_clean = json!({"annotator_errors": [["EntE"], ["OutE"], []]});
        assert!(label(MappingRule::Frank, two_clean).unwrap());
        assert!(!label(MappingRule::Frank, one_clean.clone()).unwrap());
        let four = json!({"annotator_errors": [[], [], ["x"], ["y"]]});
        assert!(!label(MappingRule::Frank, four.clone()).unwrap());
        let lenient = MappingOptions {
            frank_majority: Majority::AtLeast(1),
            ..MappingOptions::default()
        };
        assert!(map_label(MappingRule::Frank, "t", &one_clean, &lenient).unwrap());
    }

    #[test]
    fn polytope_ignores_fluency_errors() {
        assert!(label(MappingRule::Polytope, json!({"errors": ["Word Order", "duplication"]})).unwrap());
        assert!(!label(MappingRule::Polytope, json!({"errors": ["Omission"]})).unwrap());
        assert!(label(MappingRule::Polytope, json!({"errors": []})).unwrap());
        assert!(matches!(
            label(MappingRule::Polytope, json!({"errors": ["typo"]})),
            Err(Error::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn other_rules() {
        assert!(!label(MappingRule::XSumFaith, json!({"hallucinations": ["intrinsic"]})).unwrap());
        assert!(!label(MappingRule::XSumFaith, json!({"hallucinations": ["extrinsic", "intrinsic"]})).unwrap());
        assert!(label(MappingRule::XSumFaith, json!({"hallucinations": []})).unwrap());
        assert!(label(MappingRule::CoGenSumm, json!({"correct": true})).unwrap());
        assert!(!label(MappingRule::FactCC, json!({"label": "INCORRECT"})).unwrap());
        assert!(label(MappingRule::PassThrough, json!({"label": 1})).unwrap());
        assert!(matches!(
            label(MappingRule::FactCC, json!({"labels": "CORRECT"})),
            Err(Error::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn even_odd_split() {
        let (v, t) = split_even_odd(&[0, 1, 2, 3, 4, 5]);
        assert_eq!(v, vec![0, 2, 4]);
        assert_eq!(t, vec![1, 3, 5]);
        let (v, t) = split_even_odd(&[0]);
        assert_eq!((v, t), (vec![0], vec![]));
    }

    #[test]
    fn standardize_drops_empty_and_uses_official_split() {
        let spec = DatasetSpec::builtin(MappingRule::FactCC);
        let records = vec![
            json!({"id": "a", "document": "D.", "summary": "S.", "label": "CORRECT", "split": "val"}),
            json!({"id": "b", "document": "D.", "summary": " ", "label": "CORRECT", "split": "test"}),
            json!({"id": "c", "document": "D.", "summary": "S.", "label": "INCORRECT", "split": "test"}),
        ];
        let out = standardize(&spec, &records, &MappingOptions::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].split, Split::Validation);
        assert_eq!(out[1].split, Split::Test);
        assert!(!out[1].label);
        let missing = vec![json!({"id": "a", "document": "D.", "summary": "S.", "label": "CORRECT"})];
        assert!(standardize(&spec, &missing, &MappingOptions::default()).is_err());
    }

    #[test]
    fn stats() {
        let mk = |label: bool, split: Split| BenchmarkSample {
            id: "x".into(),
            dataset: "d".into(),
            split,
            document: "D.".into(),
            summary: "S.".into(),
            label,
            annotations: None,
        };
        let s = dataset_stats(&[
            mk(true, Split::Validation),
            mk(true, Split::Test),
            mk(false, Split::Validation),
            mk(true, Split::Test),
        ])
        .unwrap();
        assert_eq!(s.percent_positive, 75.0);
        assert_eq!((s.validation, s.test, s.positives), (2, 2, 3));
        let all = dataset_stats(&[mk(true, Split::Test)]).unwrap();
        assert_eq!(all.percent_positive, 100.0);
    }

    #[test]
    fn agreement_from_annotations() {
        let spec = DatasetSpec::builtin(MappingRule::SummEval);
        let records = vec![
            json!({"id": "a", "document": "D.", "summary": "S.", "consistency": [5, 5, 5]}),
            json!({"id": "b", "document": "D.", "summary": "S.", "consistency": [2, 2, 2]}),
        ];
        let samples = standardize(&spec, &records, &MappingOptions::default()).unwrap();
        assert_eq!(annotation_agreement(MappingRule::SummEval, &samples).unwrap(), Some(1.0));
        assert_eq!(annotation_agreement(MappingRule::Polytope, &samples).unwrap(), None);
    }

    #[test]
    fn rule_names_parse() {
        for r in MappingRule::ALL {
            assert_eq!(r.name().parse::<MappingRule>().unwrap(), r);
        }
        assert_eq!("XSumFaith".parse::<MappingRule>().unwrap(), MappingRule::XSumFaith);
        assert_eq!("pass-through".parse::<MappingRule>().unwrap(), MappingRule::PassThrough);
    }
}
