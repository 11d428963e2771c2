use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("degenerate mask: every position is masked")]
    DegenerateMask,

    #[error("degenerate batch: no non-padding target tokens")]
    DegenerateBatch,

    #[error("token id {index} out of range for vocabulary of size {size}")]
    Vocabulary { index: usize, size: usize },

    #[error("sequence of length {len} exceeds max_positions {max}")]
    Length { len: usize, max: usize },

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("epoch {epoch}, batch {batch}: {source}")]
    Training {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input (configs, files, vocabularies)
    /// rather than broken internal invariants.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::Config { .. }
            | Error::Data(_)
            | Error::Checkpoint(_)
            | Error::Io { .. }
            | Error::Vocabulary { .. }
            | Error::Length { .. }
            | Error::DegenerateBatch => true,
            Error::Training { source, .. } => source.is_user_error(),
            Error::Shape { .. } | Error::DegenerateMask => false,
        }
    }
}
