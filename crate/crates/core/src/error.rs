use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("agent {0} is the leader; cohesion is defined for followers only")]
    NotAFollower(usize),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("could not place {n_agents} agents without overlap after {attempts} attempts")]
    SpawnRejected { n_agents: usize, attempts: usize },

    #[error("action level index {0} out of range [0, 13)")]
    ActionOutOfRange(usize),

    #[error("prober action component {0} exceeds the 0.3 m/s bound")]
    ActionTooFast(f64),

    #[error("episode already finished; reset before stepping")]
    EpisodeFinished,

    #[error("step index {k} is not below the step limit {max_steps}")]
    StepLimit { k: usize, max_steps: usize },

    #[error("batch length mismatch: expected {expected}, got {got}")]
    BatchMismatch { expected: usize, got: usize },

    #[error("estimator: {0}")]
    Estimator(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}
