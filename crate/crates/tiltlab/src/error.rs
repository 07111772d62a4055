//! Crate-wide error type.

use thiserror::Error;

/// Alias used by every fallible operation in this crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument violated its documented range.
    #[error("invalid argument `{name}`: {reason} (got {value})")]
    InvalidArgument {
        name: &'static str,
        reason: &'static str,
        value: String,
    },

    /// Two objects that must share a shape (alphabet, horizon, length) do not.
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: String,
        expected: String,
        actual: String,
    },

    /// A probability row or weight vector contains a negative, NaN, or
    /// non-finite entry, or fails its normalization tolerance.
    #[error("invalid probabilities in {context}: {reason}")]
    InvalidProbabilities { context: String, reason: String },

    /// A twist or potential value that must be strictly positive is not.
    #[error("non-positive value in {context}: {reason}")]
    NonPositive { context: String, reason: String },

    /// Every weight in a measure to be normalized or resampled is zero.
    #[error("empty measure in {context}: all weights are zero")]
    EmptyMeasure { context: String },

    /// A custom proposal puts zero mass on a transition the reference model
    /// uses, so importance weights are unbounded.
    #[error("coverage violation at prefix `{prefix}`, symbol {symbol}: proposal mass is zero but reference mass is {reference_mass}")]
    CoverageViolation {
        prefix: String,
        symbol: u32,
        reference_mass: f64,
    },

    /// Instance text could not be parsed.
    #[error("instance parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    /// A sampler was asked to emit a trajectory containing a prefix it never
    /// queried through the counting oracle.
    #[error("no-guess violation: emitted trajectory visits unqueried prefix `{prefix}`")]
    NoGuessViolation { prefix: String },

    /// An exact enumeration was requested on a state space above the guard
    /// threshold.
    #[error("state space too large for exact enumeration: {states} states exceeds cap {cap}")]
    StateSpaceTooLarge { states: u128, cap: u128 },

    /// Underlying I/O failure (file formats, CSV, config files).
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Config deserialization failure.
    #[error("config parse error: {0}")]
    Config(#[from] toml::de::Error),

    /// CSV serialization failure.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// JSON serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid_argument(
        name: &'static str,
        reason: &'static str,
        value: impl std::fmt::Display,
    ) -> Self {
        Error::InvalidArgument {
            name,
            reason,
            value: value.to_string(),
        }
    }

    pub(crate) fn dimension_mismatch(
        what: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
