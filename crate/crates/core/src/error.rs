use thiserror::Error;

/// Errors produced by the simulator, environment and trainer.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range. `path` is the dotted field path.
    #[error("invalid config at `{path}`: {msg}")]
    Config { path: String, msg: String },

    /// An API was called with arguments that violate its contract.
    #[error("usage error: {0}")]
    Usage(String),

    /// A numeric argument lies outside the function's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data is malformed (e.g. non-finite entries).
    #[error("data error: {0}")]
    Data(String),

    /// A numerical procedure failed (non-finite loss, sampler exhaustion).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A checkpoint or table could not be loaded.
    #[error("load error: {0}")]
    Load(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
