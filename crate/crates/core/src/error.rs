//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by any module in this crate.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Operand shapes do not conform for the requested operation.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value in {op}: {detail}")]
    NonFinite { op: &'static str, detail: String },

    /// Invalid configuration (counts, ids, slots, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Dataset generation could not satisfy its constraints.
    #[error("dataset generation failed: {0}")]
    Generation(String),

    /// A dataset or checkpoint invariant does not hold.
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// Malformed binary or JSON input; offset is a byte position when known.
    #[error("parse error at byte {offset}: {detail}")]
    Parse { offset: u64, detail: String },

    /// File format version not understood.
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    /// Training diverged or hit a non-finite gradient.
    #[error("training aborted: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        CoreError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub fn non_finite(op: &'static str, detail: impl Into<String>) -> Self {
        CoreError::NonFinite {
            op,
            detail: detail.into(),
        }
    }
}
