//! Test-time batch normalization toolkit.
//!
//! The crate is organized around a normalization layer whose gradient
//! backpropagation form is decoupled from the statistics it normalizes with,
//! plus everything needed to exercise it end to end: a small fully-connected
//! network with hand-derived backprop, an entropy-minimization adaptation
//! loop with a moving-average centroid classifier, and deterministic
//! synthetic data with controllable distribution shift.

pub mod adaptation;
mod bytes;
pub mod error;
pub mod network;
pub mod normalization;
pub mod numerics;
pub mod shiftgen;

pub use error::{Error, Result};
