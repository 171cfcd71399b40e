//! Crate-wide error type.
//!
//! Every fallible operation in the crate returns [`Result`]. Errors carry
//! enough context (operation name, offending shapes, file paths) to be
//! actionable without a debugger.

use thiserror::Error;

/// Errors produced by the numerics, model, data, and harness layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Two operands had incompatible shapes for the named operation.
    #[error("shape mismatch in {op}: left operand is {left_rows}x{left_cols}, right operand is {right_rows}x{right_cols}")]
    ShapeMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    /// A scalar or hyperparameter was outside its valid range.
    #[error("invalid parameter for {what}: {details}")]
    InvalidParameter { what: &'static str, details: String },

    /// A model configuration failed validation.
    #[error("invalid model config: {0}")]
    Config(String),

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    /// Training diverged or produced a non-finite loss/gradient.
    #[error("numeric failure at epoch {epoch}, batch {batch}: {reason}")]
    Numeric {
        epoch: usize,
        batch: usize,
        reason: String,
    },

    /// An operation required state (e.g. a forward-pass cache) that is absent.
    #[error("missing state: {0}")]
    MissingState(String),

    /// A dataset or label stream violated an invariant.
    #[error("data error: {0}")]
    Data(String),

    /// A file had the wrong magic number, header, or layout.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    /// An I/O operation failed.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization failed.
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Helper for wrapping an I/O error with the path it concerns.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
