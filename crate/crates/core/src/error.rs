use std::path::PathBuf;

use thiserror::Error;

use crate::ingest::Split;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing lead {0}")]
    MissingLead(String),

    #[error("cannot parse {path}: {reason}")]
    UnparseableFile { path: PathBuf, reason: String },

    #[error("leads have unequal lengths ({lead} has {len} samples, expected {expected})")]
    InconsistentLength {
        lead: String,
        len: usize,
        expected: usize,
    },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("no records found under {0}")]
    EmptyDataset(PathBuf),

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("record too short: {len} samples, need at least {required}")]
    RecordTooShort { len: usize, required: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("reference signal is constant, R² is undefined")]
    ConstantReference,

    #[error("constant input, correlation is undefined")]
    ConstantInput,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("length {len} is not a positive multiple of {multiple}")]
    BadLength { len: usize, multiple: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite {component} loss at step {step}")]
    NonFiniteLoss { step: usize, component: &'static str },

    #[error("{0} split is empty")]
    EmptySplit(Split),

    #[error("preprocessing config hash mismatch: checkpoint has {expected}, pipeline has {found}")]
    ConfigHashMismatch { expected: String, found: String },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("plot rendering failed: {0}")]
    Plot(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn unparseable(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::UnparseableFile {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
