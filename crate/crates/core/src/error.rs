use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("schema error in `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("stream order violated: frame {got} does not follow frame {last}")]
    StreamOrder { last: u64, got: u64 },

    #[error("window underflow: need {needed} entries, have {available} (short by {shortfall})")]
    WindowUnderflow {
        needed: usize,
        available: usize,
        shortfall: usize,
    },

    #[error("no predecessor for entry {0}")]
    NoPredecessor(usize),

    #[error("window contains a frame gap between {before} and {after}")]
    WindowGap { before: u64, after: u64 },

    #[error("logic error: {0}")]
    Logic(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("script error: {0}")]
    Script(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("cannot split: {0}")]
    CannotSplit(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Data and schema problems, as opposed to usage mistakes.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Config(_))
    }
}
