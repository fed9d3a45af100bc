use std::path::PathBuf;

/// Errors produced by the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("knowledge base is empty")]
    EmptyKnowledgeBase,

    #[error("no visual text in query")]
    NoVisualText,

    #[error("empty model output")]
    EmptyOutput,

    /// Connection failures, timeouts and retryable HTTP statuses.
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    /// The backend answered but refused or mangled the exchange.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("malformed data in {source_name}: {message}")]
    Data { source_name: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by callers that map errors onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Backend,
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn data(source_name: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Data {
            source_name: source_name.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) => ErrorClass::Usage,
            Error::Transport { .. } | Error::Protocol(_) | Error::EmptyOutput => {
                ErrorClass::Backend
            }
            Error::NotFound(_)
            | Error::EmptyKnowledgeBase
            | Error::NoVisualText
            | Error::Data { .. }
            | Error::Io { .. }
            | Error::Json(_) => ErrorClass::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
