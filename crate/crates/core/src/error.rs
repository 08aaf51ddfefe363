use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("degenerate parameter: {0}")]
    DegenerateParameter(String),

    #[error("tape already consumed by a reverse pass")]
    TapeConsumed,

    #[error("tape was recorded in inference mode and cannot be reversed")]
    InferenceTape,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("negative density {value} at ray {ray}, sample {sample}")]
    NegativeDensity { ray: usize, sample: usize, value: f64 },

    #[error("pixel ({px}, {py}) outside {width}x{height} image")]
    PixelOutOfBounds {
        px: f64,
        py: f64,
        width: usize,
        height: usize,
    },

    #[error("degenerate ray: {0}")]
    DegenerateRay(String),

    #[error("stage transition rejected: {0}")]
    Stage(String),

    #[error("format error in {path:?}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("precision mismatch: file holds {found}, caller requested {requested}")]
    PrecisionMismatch { found: String, requested: String },

    #[error("chunk needs about {needed} bytes, budget is {budget} bytes")]
    MemoryBudget { needed: usize, budget: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
