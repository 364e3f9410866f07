use thiserror::Error;

/// Errors raised by the simulator core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state {0} is not in the sector")]
    NotFound(String),

    #[error("sector dimension {dim} exceeds the dense cap of {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("integration stalled at t = {t_reached}: {reason}")]
    Breakdown { t_reached: f64, reason: String },

    #[error("integration failed at t = {t_reached}: {reason}")]
    IntegrationFailure { t_reached: f64, reason: String },

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("no downward crossing of level {level}")]
    NoCrossing { level: f64 },

    #[error("checkpoint format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
