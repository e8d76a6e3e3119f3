use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid layer: {0}")]
    InvalidLayer(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("grid error: {0}")]
    Grid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("halfspace impedance is singular (xi = 0 at p = {p:e} s/m); use nonzero damping")]
    RayleighPole { p: f64 },

    #[error("singular system at {0}")]
    Singular(String),

    #[error("degenerate mode system in dimension {dim}: all coefficients vanish")]
    DegenerateModeSystem { dim: usize },

    #[error("non-finite iterate in dimension {dim} at ALS sweep {sweep}")]
    NonFinite { dim: usize, sweep: usize },

    #[error("reduced system singular after {modes} modes (condition estimate {cond:e})")]
    SingularReduced { modes: usize, cond: f64 },

    #[error("iterative solve stalled: relative residual {residual:e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
