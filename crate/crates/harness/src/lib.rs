//! Experiment harness for the test-time normalization toolkit: config-driven
//! training, adaptation method grids, ablation matrices, hyper-parameter
//! sweeps, and report emission.

pub mod ablations;
pub mod config;
pub mod error;
pub mod methods;
pub mod report;
pub mod runner;
pub mod sweep;

pub use error::{HarnessError, Result};
