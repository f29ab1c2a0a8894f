//! Simulation and validation toolkit for one-dimensional diffusions
//! reflected at zero with bounded measurable drift.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bel;
pub mod config;
pub mod drift;
pub mod error;
pub mod experiments;
pub mod grid_rng;
pub mod payoff;
pub mod pde;
pub mod quadrature;
pub mod sde;
pub mod sensitivity;
pub mod skorohod;
pub mod stats;
pub mod tolerances;

pub use error::{Error, Result};
