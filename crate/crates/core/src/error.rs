use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the fit / sample / evaluate pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("unknown category {value:?} at row {row}, column {column}")]
    UnknownCategory {
        row: usize,
        column: String,
        value: String,
    },

    #[error("missing value at row {row}, column {column}")]
    MissingValue { row: usize, column: String },

    #[error("header mismatch: expected {expected:?}, found {found:?}")]
    HeaderMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("empty input")]
    EmptyInput,

    #[error("column {0} has no values")]
    AllMissingColumn(String),

    #[error("too few rows: need at least {needed}, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("batch too small: need at least 2 rows, got {0}")]
    BatchTooSmall(usize),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}, step {step}; last good checkpoint: {checkpoint:?}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        checkpoint: Option<PathBuf>,
    },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("unsupported container version {0:?}")]
    VersionMismatch(String),

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("invalid model bundle: {0}")]
    InvalidBundle(String),

    #[error("table has no label column")]
    NoLabelColumn,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
