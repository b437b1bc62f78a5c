use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("{op}: value {value} outside the operation's domain")]
    Domain { op: &'static str, value: f64 },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("row {row} has no unmasked entries")]
    DegenerateRow { row: usize },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("invalid box {index}: {msg}")]
    InvalidBox { index: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("detection set has no objects")]
    EmptyDetections,

    #[error("detection set holds {got} objects, more than the limit of {max}")]
    TooManyObjects { got: usize, max: usize },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    Vocab { id: usize, size: usize },

    #[error("caption is empty after cleaning")]
    EmptyCaption,

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("every target position is padding")]
    DegenerateBatch,

    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short stable tag used by the command line on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension { .. } | Error::Shape { .. } => "dimension",
            Error::Domain { .. } | Error::NonFinite { .. } => "numeric",
            Error::DegenerateRow { .. } => "degenerate-row",
            Error::NonScalarLoss { .. } => "contract",
            Error::InvalidBox { .. } => "invalid-box",
            Error::Config(_) => "config",
            Error::EmptyDetections | Error::TooManyObjects { .. } => "detections",
            Error::Vocab { .. } => "vocab",
            Error::EmptyCaption => "empty-caption",
            Error::Parse { .. } => "parse",
            Error::DegenerateBatch => "degenerate-batch",
            Error::NonFiniteGradient { .. } => "non-finite-gradient",
            Error::UnknownParam(_) => "param",
            Error::EmptyDataset => "empty-dataset",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
