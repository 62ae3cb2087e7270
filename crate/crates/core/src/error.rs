use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("invalid UTF-8 at byte offset {offset}")]
    Utf8 { offset: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("id {id} out of range (size {size})")]
    OutOfRange { id: usize, size: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty vocabulary")]
    EmptyVocabulary,

    #[error("empty sentence")]
    EmptySentence,

    #[error("no unmasked tokens to score")]
    NothingToScore,

    #[error("unknown tag {0:?}")]
    UnknownTag(String),

    #[error("non-finite parameter after {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
