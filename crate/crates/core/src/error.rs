use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or indices that do not agree with each other.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("validation failed at {location}: {message}")]
    Validation { location: String, message: String },

    #[error("sentence has no parse under the grammar")]
    NoParse,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("mode error: {0}")]
    Mode(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("training fault in batch {batch}: {message}")]
    TrainingFault { batch: usize, message: String },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("degenerate statistical test: {0}")]
    DegenerateTest(String),

    #[error("refusing enumeration: {0}")]
    Refused(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit status: 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Mode(_) => 2,
            _ => 1,
        }
    }
}
