//! Variational and Monte Carlo laboratory for exit-time functionals of
//! non-symmetric diffusions on structured grids.

pub mod applications;
pub mod convergence;
pub mod ergodic;
pub mod error;
pub mod exit_time;
pub mod expr;
pub mod fields;
pub mod geometry;
pub mod linalg;
pub mod montecarlo;
pub mod operator;
pub mod poisson;
pub mod rng;
pub mod variational;

pub use error::{Error, Result};
