//! Simulation and verification of concentration inequalities for random
//! walks and branching random walks with position-dependent drift and
//! branching.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod brw;
pub mod error;
pub mod experiment;
pub mod mc;
pub mod models;
pub mod quadrature;
pub mod recurrence;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use models::{BranchingKernel, DisplacementKernel, ModelSpec, ScaleParams};
pub use rng::RngSpec;
