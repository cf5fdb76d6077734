use thiserror::Error;

/// Errors raised by the numerical core.
///
/// The variants split into two families: argument/configuration problems
/// (`InvalidGrid`, `InvalidArgument`, `GridMismatch`, `Unsupported`) and
/// numerical guards that fire while computing (`FixedPoint`, `Eigensolver`,
/// `Krylov`, `Guard`). The CLI maps them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("fixed-point iteration did not converge (residual {residual:.3e} after {iterations} iterations)")]
    FixedPoint { residual: f64, iterations: usize },

    #[error("eigensolver did not converge (max residual {max_residual:.3e})")]
    Eigensolver { max_residual: f64 },

    #[error("Krylov exponential failed to reach tolerance (estimate {estimate:.3e})")]
    Krylov { estimate: f64 },

    #[error("numerical guard: {0}")]
    Guard(String),

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures detected while computing, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::FixedPoint { .. } | Error::Eigensolver { .. } | Error::Krylov { .. } | Error::Guard(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
