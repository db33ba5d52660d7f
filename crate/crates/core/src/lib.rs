//! Numerical schemes for one-dimensional SDEs driven by fractional Brownian
//! motion, exact pathwise references, and the asymptotic error theory used
//! to validate them.

pub mod error;
pub mod fbm;
pub mod flow;
pub mod harness;
pub mod limits;
pub mod model;
pub mod ode;
pub mod perturbation;
pub mod quadrature;
pub mod rng;
pub mod schemes;
pub mod stats;
pub mod variations;

pub use error::{Error, Result};
