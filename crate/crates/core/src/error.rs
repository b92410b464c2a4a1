use std::path::PathBuf;

use thiserror::Error;

/// Errors shared by every stage of the in-betweening pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, count, range).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration value is missing, unknown or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported frame rate conversion from {from} fps to {to} fps")]
    UnsupportedRate { from: u32, to: u32 },

    #[error("parse error in {path}: {context}")]
    Parse { path: String, context: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(String),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefixes the message with where the failure happened, keeping the kind.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Contract(m) => Error::Contract(format!("{ctx}: {m}")),
            Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
            Error::Image(m) => Error::Image(format!("{ctx}: {m}")),
            Error::Parse { path, context } => Error::Parse {
                path,
                context: format!("{ctx}: {context}"),
            },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
