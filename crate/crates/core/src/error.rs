use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty dataset: {0}")]
    EmptyData(String),

    #[error("IDX format error: {0}")]
    Format(String),

    #[error("IDX length error: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },

    #[error("partition left node {node} with an empty shard")]
    EmptyShard { node: usize },

    #[error("cannot consolidate an empty set of updates")]
    EmptyAggregation,

    #[error("degenerate consolidation weights: {0}")]
    DegenerateWeights(String),

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("no checkpoint for node {node} within {max_age} rounds of round {round}")]
    MissingCheckpoint {
        node: usize,
        round: usize,
        max_age: usize,
    },

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("config parse error at line {line}, column {column}: {message}")]
    ConfigParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
