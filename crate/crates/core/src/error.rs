use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("granularity {granularity} is not supported on the {side} side")]
    UnsupportedGranularity { granularity: String, side: String },

    #[error("empty premise or hypothesis in pair {index}")]
    EmptyPair { index: usize },

    #[error("NLI backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("pair not present in fixture (premise: {premise:?}, hypothesis: {hypothesis:?})")]
    FixtureMiss { premise: String, hypothesis: String },

    #[error("invalid NLI probabilities: {0}")]
    InvalidProbs(String),

    #[error("matrix dimension is zero: {0}")]
    DimensionZero(String),

    #[error("score {0} is outside [0, 1]")]
    OutOfRangeScore(f64),

    #[error("model shape mismatch: expected {expected} weights, found {found}")]
    ModelShapeMismatch { expected: usize, found: usize },

    #[error("training labels contain a single class")]
    DegenerateLabels,

    #[error("schema mismatch for record {id}: {reason}")]
    SchemaMismatch { id: String, reason: String },

    #[error("labels contain a single class")]
    SingleClassLabels,

    #[error("rating table rows have unequal rater counts")]
    UnequalRaterCounts,

    #[error("agreement is undefined: all ratings fall into one category")]
    UndefinedAgreement,

    #[error("entity extractor unavailable: {0}")]
    ExtractorUnavailable(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes, used by the command-line front end to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Backend,
    Data,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::EmptyInput(_)
            | Error::UnsupportedGranularity { .. }
            | Error::EmptyPair { .. }
            | Error::ModelShapeMismatch { .. }
            | Error::Config(_)
            | Error::Io { .. }
            | Error::Json(_) => ErrorClass::Input,
            Error::BackendUnavailable(_)
            | Error::FixtureMiss { .. }
            | Error::InvalidProbs(_)
            | Error::ExtractorUnavailable(_) => ErrorClass::Backend,
            Error::DimensionZero(_)
            | Error::OutOfRangeScore(_)
            | Error::DegenerateLabels
            | Error::SchemaMismatch { .. }
            | Error::SingleClassLabels
            | Error::UnequalRaterCounts
            | Error::UndefinedAgreement => ErrorClass::Data,
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyInput(_) => "EmptyInput",
            Error::UnsupportedGranularity { .. } => "UnsupportedGranularity",
            Error::EmptyPair { .. } => "EmptyPair",
            Error::BackendUnavailable(_) => "BackendUnavailable",
            Error::FixtureMiss { .. } => "FixtureMiss",
            Error::InvalidProbs(_) => "InvalidProbs",
            Error::DimensionZero(_) => "DimensionZero",
            Error::OutOfRangeScore(_) => "OutOfRangeScore",
            Error::ModelShapeMismatch { .. } => "ModelShapeMismatch",
            Error::DegenerateLabels => "DegenerateLabels",
            Error::SchemaMismatch { .. } => "SchemaMismatch",
            Error::SingleClassLabels => "SingleClassLabels",
            Error::UnequalRaterCounts => "UnequalRaterCounts",
            Error::UndefinedAgreement => "UndefinedAgreement",
            Error::ExtractorUnavailable(_) => "ExtractorUnavailable",
            Error::Config(_) => "Config",
            Error::Io { .. } => "Io",
            Error::Json(_) => "Json",
        }
    }
}
