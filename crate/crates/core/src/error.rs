use std::path::PathBuf;

use thiserror::Error;

use crate::search::SearchReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("genome format error at {node}: {reason}")]
    Format { node: String, reason: String },

    #[error("invalid token sequence at position {position}: {reason}")]
    Token { position: usize, reason: String },

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}:{line}: {reason}")]
    Line {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("search error: {0}")]
    Search(String),

    #[error("oracle failed after {} evaluations: {reason}", partial.evaluated.len())]
    OracleFailed {
        reason: String,
        partial: Box<SearchReport>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(node: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            node: node.into(),
            reason: reason.into(),
        }
    }
}
