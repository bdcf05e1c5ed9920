use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dim(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("training failed: {0}")]
    Train(String),

    #[error("ensemble error: {0}")]
    Ensemble(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("artifact stage ordering: {0}")]
    Stage(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }
}
