use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Incompatible shapes or invalid layer/model configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// API misuse, e.g. calling backward on a non-scalar.
    #[error("usage error: {0}")]
    Usage(String),

    /// Input that violates an operation's precondition.
    #[error("input error: {0}")]
    Input(String),

    /// A coordinate outside the interpolation domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed file content.
    #[error("{path}: parse error at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    /// Robust estimation could not produce a model.
    #[error("estimation failed: {0}")]
    Estimation(String),

    /// A training step produced a non-finite loss.
    #[error("non-finite loss at step {step} (pair seed {pair_seed})")]
    NonFinite { step: usize, pair_seed: u64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, offset: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
