use thiserror::Error;

/// Errors raised by the laboratory. Audit failures are never errors; they are
/// reported as verdict content.
#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structural(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("model error: {message} (input: {input})")]
    Model { message: String, input: String },

    #[error("numeric error in {term}: {message}")]
    Numeric { term: String, message: String },

    #[error("integration error in replica {replica} at step {step}: {message}")]
    Integration {
        replica: usize,
        step: usize,
        message: String,
    },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn numeric(term: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Numeric {
            term: term.into(),
            message: msg.into(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: msg.into(),
        }
    }

    /// Process exit code for the command-line front end: 2 for usage and
    /// configuration problems, 3 for numeric or integration failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config { .. } | Error::Parse { .. } | Error::Json(_) => 2,
            Error::Io(_) | Error::Structural(_) => 2,
            Error::Model { .. } | Error::Numeric { .. } | Error::Integration { .. } | Error::Fit(_) => 3,
        }
    }
}
