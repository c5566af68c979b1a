use thiserror::Error;

/// Errors raised by the geometry kernels and the solver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("argument error: {0}")]
    Argument(String),

    #[error("eigenvalues {eigenvalues:?} outside the admissible cone")]
    ConeViolation { eigenvalues: Vec<f64> },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("gradient misses the target boundary (defining function {defect:.3e})")]
    BoundaryMismatch { defect: f64 },

    #[error("missing capability: {0}")]
    Capability(String),

    #[error("gradient map does not reach y = {y:?}")]
    OutOfImage { y: Vec<f64> },

    #[error("precondition failed: {what} (defect {defect:.3e})")]
    Precondition { what: String, defect: f64 },

    #[error("flow leaves the upper hemisphere (denominator {denominator:.3e})")]
    HemisphereExit { denominator: f64 },

    #[error("grid construction failed: {0}")]
    Grid(String),

    #[error("singular Jacobian (smallest pivot {min_pivot:.3e})")]
    SingularJacobian { min_pivot: f64 },

    #[error("Newton did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("line search stalled at iteration {iteration} (residual {residual:.3e})")]
    Stall {
        iteration: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("continuation failed at eps = {eps} after {} completed levels: {source}", completed.len())]
    PartialContinuation {
        eps: f64,
        completed: Vec<crate::solver::LevelRecord>,
        source: Box<Error>,
    },

    #[error("strict convexity violated: {0}")]
    StrictConvexity(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
