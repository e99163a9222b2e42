use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("policy error: {0}")]
    Policy(String),

    #[error("gabor synthesis failed for {params}: {reason}")]
    Synthesis { params: String, reason: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("ingestion error in {path} at byte {offset}: {reason}")]
    Ingestion {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("architecture parse error at token {position} ({token:?}): {reason}")]
    Parse {
        position: usize,
        token: String,
        reason: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("comparison refused: {0}")]
    Comparison(String),

    #[error("training diverged in epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value while checking parameter {param}")]
    NonFinite { param: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
