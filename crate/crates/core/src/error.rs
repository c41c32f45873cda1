use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("record {doc_id}: {reason}")]
    InvalidRecord { doc_id: String, reason: String },

    #[error("duplicate doc_id {0}")]
    DuplicateDocument(String),

    #[error("vocabulary is empty after applying min_count = {min_count}")]
    EmptyVocabulary { min_count: u64 },

    #[error("all topics dropped: {0}")]
    AllTopicsDropped(String),

    #[error("seed feature '{0}' is missing from the vocabulary")]
    SeedNotInVocabulary(String),

    #[error("unknown group level: {0}")]
    UnknownLevel(String),

    #[error("design matrix is singular: {0}")]
    SingularDesign(String),

    #[error("non-finite bound at EM iteration {0}")]
    NonFiniteBound(usize),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("{what} index {index} out of range (size {len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("IRLS did not converge after {iterations} iterations (deviance trace: {trace:?})")]
    IrlsDivergence { iterations: usize, trace: Vec<f64> },

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("serialization: {0}")]
    Serialization(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// True for failures caused by missing or malformed inputs and bad
    /// configuration, as opposed to failures of the computation itself.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse { .. }
                | Error::Config(_)
                | Error::InvalidRecord { .. }
                | Error::DuplicateDocument(_)
                | Error::Serialization(_)
        )
    }
}
