//! Discretized Wiener-space calculus for adapted perturbations of identity:
//! Brownian paths, drift families, Malliavin gradients and divergences,
//! Girsanov densities, conditional-expectation filters, entropy and
//! mutual-information estimators, and inverse-shift solvers.

pub mod conventions;
pub mod drift;
pub mod entropy;
pub mod error;
pub mod filtering;
pub mod girsanov;
pub mod inversion;
pub mod malliavin;
pub mod montecarlo;
pub mod oracles;
pub mod quadrature;
pub mod stats;
pub mod wiener;

pub use error::{Error, Result};
