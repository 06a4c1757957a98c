use thiserror::Error;

/// Errors raised by the spectral, extension and solver layers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("mode index {index} out of range for a layout of {len} modes")]
    ModeIndex { index: usize, len: usize },

    #[error("grid of {grid} points cannot resolve {modes} modes without aliasing")]
    Aliasing { grid: usize, modes: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("time {t} outside the horizon [0, {horizon}]")]
    Range { t: f64, horizon: f64 },

    #[error("snapshot mismatch: {0}")]
    SnapshotMismatch(String),

    #[error("quadrature did not converge: achieved error estimate {achieved:e}, requested {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("nonlinearity construction failed: {0}")]
    Construction(String),

    #[error("step failed at t = {t}: {reason}")]
    Step {
        t: f64,
        reason: String,
        residuals: Vec<f64>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
