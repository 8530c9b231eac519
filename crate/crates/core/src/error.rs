use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("metric is not positive definite at node ({i}, {j})")]
    Metric { i: usize, j: usize },
    #[error("stencil error: {0}")]
    Stencil(String),
    #[error("point is unreachable from the source")]
    Unreachable,
    #[error("region truncated by the chart boundary (reach {reach})")]
    Truncation { reach: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("solver error: {0}")]
    Solver(String),
    #[error("eigen iteration did not converge after {iters} iterations (last change {change:e})")]
    NoConvergence { iters: usize, change: f64 },
    #[error("coercivity failure after {halvings} radius halvings")]
    Coercivity { halvings: usize },
    #[error("patch too large: jacobian changes sign (min {jacobian_min:e})")]
    PatchTooLarge { jacobian_min: f64 },
    #[error("quadrature resolution error: {0}")]
    Quadrature(String),
    #[error("rank deficiency: {0}")]
    Rank(String),
    #[error("resolution budget exceeded: {nodes} nodes > {budget}")]
    Resolution { nodes: usize, budget: usize },
    #[error("fit error: {0}")]
    Fit(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("input error: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, Error>;
