use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("map format error at line {line}: {message}")]
    MapFormat { line: usize, message: String },

    #[error("invalid parameter `{name}`: {message}")]
    Parameter { name: &'static str, message: String },

    #[error("scenario generation failed for seed {seed}: {message}")]
    Generation { seed: u64, message: String },

    #[error("invalid world state: {0}")]
    InvalidState(String),

    /// The cooperativeness metric has no value (no co-agents in scope).
    #[error("cooperativeness metric undefined for agent {agent}: {reason}")]
    UndefinedMetric { agent: usize, reason: &'static str },

    #[error("intractable: {0}")]
    Tractability(String),

    #[error("snapshot format error: {0}")]
    SnapshotFormat(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("tuning iteration {iteration}: {source}")]
    Tune {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
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
    pub(crate) fn param(name: &'static str, message: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
