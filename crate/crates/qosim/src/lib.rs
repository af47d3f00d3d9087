//! Scenario files, result directories and the command-line driver for the
//! qosim simulator.

pub mod config;
pub mod output;

pub use qosim_core as core;
