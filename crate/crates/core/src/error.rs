use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite{}", .context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    NotPositiveDefinite { context: Option<String> },

    #[error("{what} requires a quadratic objective")]
    RequiresQuadratic { what: &'static str },

    #[error("line search failed at iteration {iteration} after {halvings} halvings (gradient norm {grad_norm:e})")]
    LineSearch { iteration: usize, halvings: usize, grad_norm: f64, w: Vec<f64> },

    #[error("gradient descent diverged at step {step}: objective {value:e} from {start:e}")]
    Diverged { step: usize, value: f64, start: f64 },

    #[error("no convergence: gradient norm {grad_norm:e} above tolerance {tol:e} after {iterations} iterations")]
    NoConvergence { iterations: usize, grad_norm: f64, tol: f64, best: Vec<f64> },

    #[error("synchronisation: {0}")]
    Sync(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
