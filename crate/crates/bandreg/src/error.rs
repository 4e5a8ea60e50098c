//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Two operands carry different band/grid specifications.
    #[error("spec mismatch: {0}")]
    SpecMismatch(String),

    /// A spatial field does not match the expected grid.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A shape-level disagreement (image sizes, channel counts, mask sizes).
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A scalar or structural parameter is out of its valid range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Time integration produced non-finite values.
    #[error("integration diverged at step {step}: {context}")]
    IntegrationDiverged { step: usize, context: String },

    /// The registration energy became non-finite.
    #[error("energy diverged: {0}")]
    EnergyDiverged(String),

    /// Network training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    /// Binary container or PGM parsing failure (bad magic, truncation, checksum).
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
