use thiserror::Error;

use crate::solver::PicardDiagnostics;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("cholesky factorisation failed at pivot {pivot} (value {value:e})")]
    Cholesky { pivot: usize, value: f64 },

    #[error("circulant embedding has eigenvalue {value:e} at index {index}, below tolerance -1e-10")]
    NegativeEigenvalue { index: usize, value: f64 },

    #[error("rank-deficient regression ({basis_size} basis functions, pivot {pivot}); set ridge_lambda > 0")]
    RankDeficient { basis_size: usize, pivot: usize },

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("solver error at time index {index}, path {path}: {message}")]
    Solver {
        index: usize,
        path: usize,
        message: String,
    },

    #[error("Picard iteration did not converge after {} iterations", .0.iteration_count)]
    NonConvergence(Box<PicardDiagnostics>),

    #[error("outer comparison step {outer}: {source}")]
    Outer {
        outer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(vec![msg.into()])
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
