use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh subdivision count must be at least 2, got {0}")]
    MeshTooCoarse(usize),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("point ({x}, {y}) lies outside the unit square")]
    PointOutsideDomain { x: f64, y: f64 },

    #[error("penalty parameter must satisfy sigma >= 1, got {0}")]
    PenaltyTooSmall(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "observation grid with {cells} cells per side is not aligned with a mesh of {n} squares per side \
         (cells must contain whole mesh squares)"
    )]
    MisalignedGrid { cells: usize, n: usize },

    #[error("observation point ({x}, {y}) does not coincide with a finite element node")]
    PointNotOnNode { x: f64, y: f64 },

    #[error("no truth snapshot for step {0}")]
    MissingSnapshot(usize),

    #[error("sparse factorization failed: {0}")]
    Factorization(String),

    #[error("linear solver did not reach relative residual {tol:e} in {iterations} iterations (reached {achieved:e})")]
    LinearSolve {
        tol: f64,
        iterations: usize,
        achieved: f64,
    },

    #[error(
        "Newton iteration failed at step {step}: residual {residual:e} after {iterations} iterations"
    )]
    NewtonDiverged {
        step: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("eigenvalue iteration did not converge after {0} iterations")]
    EigenNonConvergence(usize),

    #[error("malformed config at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error("run `{label}` failed at step {step}: {message}")]
    RunFailed {
        label: String,
        step: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
