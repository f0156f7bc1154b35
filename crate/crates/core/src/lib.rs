//! Simulation and verification laboratory for a thermostatted N-particle
//! system with Maxwellian collisions.
//!
//! The crate simulates the microscopic dynamics (thermostat flow plus
//! Poisson rotation collisions), builds the slow/fast decomposition and the
//! exact rough-path lifts of the rescaled driver, integrates the limiting
//! SDEs (sphere diffusion, speed SDE, Ornstein-Uhlenbeck), and verifies the
//! closed-form transport constants and convergence claims statistically.

// `!(x > 0.0)` deliberately routes NaN parameters into the error branch,
// and indexed loops over several parallel slices stay as plain loops.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod geom;
pub mod io;
pub mod micro;
pub mod rng;
pub mod rough;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
pub use rng::RngStream;
