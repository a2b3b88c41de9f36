//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any tailq-core operation.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix dimension did not match what the operation expects.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A numeric input that must be finite was NaN or infinite.
    #[error("non-finite value in {context}: {value}")]
    NonFinite { context: &'static str, value: f64 },

    /// A gradient became NaN or infinite during optimization.
    #[error("non-finite gradient for parameter {index} (value {value}); training aborted")]
    NonFiniteGradient { index: usize, value: f64 },

    /// Training loss diverged.
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    /// A quantile level outside [0, 1], or an endpoint where the operation is undefined.
    #[error("invalid quantile level {level}: {reason}")]
    InvalidLevel { level: f64, reason: &'static str },

    /// A parameter that must be positive (grid step, bin width, ratios, ...) was not.
    #[error("invalid argument for {context}: {reason}")]
    InvalidArgument { context: &'static str, reason: String },

    /// Empty input where at least one element is required.
    #[error("empty input in {context}")]
    EmptyInput { context: &'static str },

    /// A required CSV column is absent.
    #[error("missing required column `{column}` in {path}")]
    MissingColumn { column: String, path: String },

    /// A CSV cell failed to parse as a number.
    #[error("malformed cell in {path} at data row {row}, column `{column}`: {cell:?}")]
    MalformedCell {
        path: String,
        row: usize,
        column: String,
        cell: String,
    },

    /// Numeric root bracketing failed (non-finite transformer parameters).
    #[error("failed to bracket inverse of coupling transformer: {reason}")]
    BracketFailure { reason: String },

    /// No trained model available for a requested quantile level.
    #[error("no model trained for quantile level {level}")]
    MissingLevel { level: f64 },

    /// Base-variable value outside the support of the flow's base distribution.
    #[error("base value {value} outside support of the {base} base distribution")]
    OutsideSupport { value: f64, base: &'static str },

    /// Checkpoint or data file with an unsupported format version.
    #[error("unsupported format version {found} (supported: {supported})")]
    FormatVersion { found: u32, supported: u32 },

    /// I/O failure, annotated with the offending path.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// CSV-level failure (framing, quoting, ...).
    #[error("csv error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    /// JSON (de)serialization failure.
    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(context: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            context,
            reason: reason.into(),
        }
    }
}

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;
