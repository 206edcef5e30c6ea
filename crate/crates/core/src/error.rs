use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid column mapping: {0}")]
    Mapping(String),

    #[error("{skipped} of {total} lines could not be parsed; the column mapping is probably wrong")]
    TooManyMalformed { skipped: usize, total: usize },

    #[error("dataset is empty after preprocessing ({users} users, {pois} POIs)")]
    EmptyDataset { users: usize, pois: usize },

    #[error("user {user} has {len} check-ins; at least 2 are needed to split")]
    SequenceTooShort { user: usize, len: usize },

    #[error("dataset has no train/test split")]
    NotSplit,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("unsupported file version {found:?}, expected {expected:?}")]
    Version { found: String, expected: &'static str },

    #[error("checksum mismatch: file says {stored}, content hashes to {computed}")]
    Checksum { stored: String, computed: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite gradient in {matrix} row {row}")]
    NonFiniteGradient { matrix: &'static str, row: usize },

    #[error("non-finite loss in {context}")]
    NonFiniteLoss { context: String },

    #[error("sequential model needs a non-empty history")]
    EmptyHistory,

    #[error("NaN score for POI {poi}")]
    NanScore { poi: u32 },

    #[error("no test check-in qualifies for evaluation")]
    NoEvaluationSamples,

    #[error("invalid config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
