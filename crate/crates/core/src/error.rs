use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config schema error: {0}")]
    Schema(String),

    #[error("network invalid: {}", .0.join("; "))]
    Invalid(Vec<String>),

    #[error("simulation error: {0}")]
    Sim(String),

    #[error("controller error: {0}")]
    Control(String),

    #[error("policy error: {0}")]
    Policy(String),

    #[error("learning error: {0}")]
    Learn(String),

    #[error("model file error: {0}")]
    ModelFile(String),

    #[error("metrics error: {0}")]
    Metrics(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
