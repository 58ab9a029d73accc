use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("level {level} out of range (hierarchy has {levels} levels)")]
    LevelOutOfRange { level: usize, levels: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("diffusion coefficient violates ellipticity: {0}")]
    Ellipticity(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("iteration did not converge: {0}")]
    NotConverged(String),
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
