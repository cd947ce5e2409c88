use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("tensor of shape {shape:?} needs {expected} values, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {kind}")]
    Parse { path: PathBuf, kind: ParseError },

    #[error("non-finite gradient for parameter `{param}` at epoch {epoch}")]
    NonFiniteGradient { param: String, epoch: usize },

    #[error("non-finite objective at epoch {epoch}, step {step}: {detail}")]
    NonFiniteObjective {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("missing data file {path}. {hint}")]
    MissingData { path: PathBuf, hint: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Failure modes of the dataset readers.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file: header promises {expected} bytes of payload, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("row {row}: expected {expected} columns, found {found}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column {col}: cannot parse `{cell}` as a number")]
    NotNumeric { row: usize, col: usize, cell: String },
    #[error("row {row}: label `{cell}` is not a non-negative integer")]
    BadLabel { row: usize, cell: String },
    #[error("file is empty")]
    Empty,
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
