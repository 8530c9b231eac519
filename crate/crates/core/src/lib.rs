//! Numerical tools for two-dimensional Riemannian metrics: isothermal coordinates,
//! Bergman kernels of holomorphic differentials, spectral and isoperimetric constants,
//! heat kernels, Green functions and exhaustion experiments.

// `!(x > 0.0)` is used on purpose so that NaN is rejected together with the bad range
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::too_many_arguments, clippy::type_complexity)]

pub mod bergman;
pub mod cli;
pub mod convergence;
pub mod error;
pub mod heatgreen;
pub mod isothermal;
pub mod linalg;
pub mod mesh;
pub mod quadrature;
pub mod spectral;
pub mod surface;

pub use error::{Error, Result};
