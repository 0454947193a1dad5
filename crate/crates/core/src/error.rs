use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlpError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("instance {0} appears in more than one bag")]
    OverlappingBags(usize),

    #[error("cosine distance undefined for zero vector (row {0})")]
    ZeroVector(usize),

    #[error("labels contain a single class; both classes are required")]
    SingleClass,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
}

impl LlpError {
    /// Short machine-readable tag, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            LlpError::Io { .. } => "io",
            LlpError::Csv(_) => "csv",
            LlpError::Json(_) => "json",
            LlpError::Parse { .. } => "parse",
            LlpError::InvalidArgument(_) => "invalid_argument",
            LlpError::DimensionMismatch { .. } => "dimension_mismatch",
            LlpError::OverlappingBags(_) => "overlapping_bags",
            LlpError::ZeroVector(_) => "zero_vector",
            LlpError::SingleClass => "single_class",
            LlpError::NonFiniteLoss { .. } => "non_finite_loss",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LlpError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, LlpError>;

pub(crate) fn invalid(msg: impl Into<String>) -> LlpError {
    LlpError::InvalidArgument(msg.into())
}
