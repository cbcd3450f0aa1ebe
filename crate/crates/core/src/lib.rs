//! Non-parametric Bayesian estimation of a radially symmetric point spread
//! function from a blurred edge.
//!
//! The pieces, bottom up:
//!
//! * [`model`]: grids, the edge-blur operator `G`, the radial prior precision
//!   `L`, and synthetic data.
//! * [`linalg`]: Cholesky factorization with factorization counting, solves,
//!   log-determinants and exact Gaussian posterior draws.
//! * [`samplers`]: hierarchical Gibbs, marginal-then-conditional (MTC) and
//!   partially collapsed Gibbs samplers over `(λ, δ, p)`.
//! * [`diagnostics`]: Geweke stationarity test, integrated autocorrelation
//!   time, effective sample size and Cholesky-per-ESS efficiency.

pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod model;
pub mod samplers;

pub use error::{Error, Result};
