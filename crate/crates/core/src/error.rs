use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("corpus file is empty")]
    EmptyFile,

    #[error("duplicate page ({site}, {page})")]
    DuplicatePage { site: String, page: String },

    #[error("corpus is empty after filtering")]
    EmptyAfterFilter,

    #[error("site {0} has a single page and cannot be split")]
    SiteTooSmall(String),

    #[error("token index {index} outside vocabulary of size {vocab_size}")]
    TokenOutOfRange { index: usize, vocab_size: usize },

    #[error("topic index {topic} out of range for a page with {topics} topics")]
    TopicOutOfRange { topic: usize, topics: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("incompatible vocabularies: {0}")]
    Vocabulary(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
