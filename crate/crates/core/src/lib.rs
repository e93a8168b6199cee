//! Bounded-error Grünwald-Letnikov models of fractional-order systems and
//! offset-free model predictive control against a simulated fractional plant.

pub mod error;
pub mod dare;
pub mod estimator;
pub mod gl;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod mpc;
pub mod plant;
pub mod qp;

pub use error::{Error, Result};
