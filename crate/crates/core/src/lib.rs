//! Analytic approximations of FDMA small-cell uplink interference, with an exact
//! Monte Carlo reference for validating them.

pub mod analysis;
pub mod bound;
pub mod channel;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod montecarlo;
pub mod scenario;
pub mod special;

pub use error::{Error, Result};
