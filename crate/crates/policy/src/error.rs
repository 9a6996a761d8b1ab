use thiserror::Error;

pub type Result<T> = std::result::Result<T, PolicyError>;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid policy configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("shape mismatch for {name}: expected {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Env(#[from] isli_core::CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
