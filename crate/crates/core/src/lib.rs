//! Simulation and numerical verification toolkit for anomalous phonon
//! diffusion in a two-dimensional linear Boltzmann model.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod kernel;
pub mod kinetic_solver;
pub mod runner;
pub mod sampler;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
