use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TlmError> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum TlmError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(String),
    #[error("parse error at row {row}, column '{column}': cannot read '{value}' as a number")]
    Parse { row: usize, column: String, value: String },
    #[error("non-finite value at row {row}, column '{column}'")]
    NonFinite { row: usize, column: String },
    #[error("target column '{0}' not found")]
    MissingColumn(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid synthetic tessellation: {0}")]
    InvalidSpec(String),
    #[error("cell {0} received no samples within the rejection budget")]
    EmptyCell(usize),
    #[error("singular normal equations (collinear features with ridge_lambda = 0); use ridge_lambda > 0")]
    Singular,
    #[error("labels must be 0 or 1, found {0}")]
    NonBinaryLabels(f64),
    #[error("illegal split at threshold {threshold}: sides have {left} and {right} rows, minimum is {min_leaf}")]
    IllegalSplit {
        threshold: f64,
        left: usize,
        right: usize,
        min_leaf: usize,
    },
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("missing targets: {0}")]
    MissingTargets(String),
    #[error("model format error: {0}")]
    Format(String),
}

impl TlmError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TlmError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            TlmError::InvalidConfig(_) | TlmError::InvalidSpec(_) => ErrorKind::Config,
            TlmError::Singular | TlmError::Divergence { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}
