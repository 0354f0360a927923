use thiserror::Error;

/// Errors produced by model evaluation, synthesis, and simulation.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("state outside admissible domain: {context} (coordinate {index}, value {value})")]
    OutOfDomain {
        context: &'static str,
        index: usize,
        value: f64,
    },

    #[error("invalid gains: {0}")]
    InvalidGains(String),

    #[error("singular matrix in {0}")]
    SingularMatrix(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("Newton iteration did not converge after {iterations} steps (last residual {residual:.3e})")]
    SolverDidNotConverge { iterations: usize, residual: f64 },

    #[error("shaped Hessian not uniformly positive on D0 (sampled min eigenvalue {min_eig:.6e})")]
    ShapedHessianNotPositive { min_eig: f64 },

    #[error("trajectory diverged: non-finite state at t = {t_last}")]
    Divergence { t_last: f64 },

    #[error("error norms at the noise floor over the fit window; rate fit is meaningless")]
    NoiseFloor,

    #[error("eigenvalue computation failed: {0}")]
    Eigen(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
