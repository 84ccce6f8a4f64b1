use thiserror::Error;

/// Errors raised while reading or validating dataset files.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: malformed JSON: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("line {line}: duplicate key {key} (first seen on line {first})")]
    Duplicate {
        line: usize,
        first: usize,
        key: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Errors raised by metric and annotation arithmetic.
#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("gain at position {position} is {value}, expected 0 or 1")]
    NonBinaryGain { position: usize, value: f64 },
    #[error("gain at position {position} is negative ({value})")]
    NegativeGain { position: usize, value: f64 },
    #[error("relevance vector is empty")]
    Empty,
    #[error("r_total = {r_total} is smaller than the {hits} relevant items in the list")]
    RelevantTotalTooSmall { r_total: usize, hits: usize },
    #[error("probability {0} is outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("utility {0} is outside [-1, 1]")]
    UtilityOutOfRange(f64),
    #[error("utility {0} is positive and cannot describe a distractor")]
    NotADistractor(f64),
    #[error("gamma {0} is outside [0, 1]")]
    GammaOutOfRange(f64),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite value {0}")]
    NonFinite(f64),
}
