//! Fragmentation with blocks killed below a moving barrier `e^{−(x+ct)}`:
//! extinction probabilities by simulation, and the travelling wave that
//! describes them as a function of the headroom `x`.
//!
//! - [`dislocation`]: finite dislocation measures, Φ, critical exponent and speed.
//! - [`simulator`]: exact event-driven Monte Carlo of the killed process.
//! - [`levy`]: the tagged-fragment Lévy process, its scale function and exit
//!   probabilities.
//! - [`fkpp`]: the operator L, residuals and a shooting solver for the wave.
//! - [`verify`]: the acceptance battery shared by the test suite and the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dislocation;
pub mod error;
pub mod estimate;
pub mod fkpp;
pub mod levy;
pub mod roots;
pub mod simulator;
pub mod stream;
pub mod verify;

pub use dislocation::{DislocationMeasure, FragmentVector};
pub use error::{Error, Result};
pub use estimate::EstimateCI;
pub use fkpp::WaveGrid;
