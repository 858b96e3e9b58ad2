//! Ternary resistor-ladder DAC simulator.
//!
//! - [`codec`]: fixed-point samples to balanced-ternary digits and switch states
//! - [`network`]: modified nodal analysis of resistive networks
//! - [`dac`]: ladder topologies, the 20-stage prototype, calibration and weights
//! - [`signal`]: stimulus generation and end-to-end simulation
//! - [`analysis`]: SFDR, efficiency, noise budget, sweeps and Monte-Carlo
//! - [`cli`]: the `ternadac` command-line surface

pub mod analysis;
pub mod cli;
pub mod codec;
pub mod dac;
pub mod error;
pub mod network;
pub mod signal;

pub use error::{Error, ErrorCategory, Result};
