use thiserror::Error;

/// Errors produced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside the range where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller violated a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An adaptive integrator or quadrature could not reach its tolerance.
    #[error("solver failed to reach tolerance (attained error estimate {attained:.3e}): {context}")]
    Solver { context: String, attained: f64 },

    /// Cholesky factorization met a non-positive pivot.
    #[error("covariance matrix is not positive definite at pivot {pivot} (value {value:.3e})")]
    Factorization { pivot: usize, value: f64 },

    /// Crank-Nicolson step outside the contraction region.
    #[error("inadmissible implicit step: contraction factor {factor:.4} exceeds {limit}")]
    InadmissibleStep { factor: f64, limit: f64 },

    /// Root finding could not bracket or converge.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
