use thiserror::Error;

/// Errors raised by the solvers and model layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("integration diverged after t = {last_valid_time}")]
    Divergence { last_valid_time: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("degenerate solution: {0}")]
    Degenerate(String),

    #[error("branch stalled: {0}")]
    Stalled(String),

    #[error("event localization failed: {0}")]
    Localization(String),

    #[error("branch switching failed: {0}")]
    SwitchFailure(String),

    #[error("surface front failed: {0}")]
    SurfaceFront(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
