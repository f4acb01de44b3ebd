use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("propagation failed at step {step}: {msg}")]
    Propagation { step: usize, msg: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("stale trajectory: parameters changed since the forward pass ({0})")]
    StaleTrajectory(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
