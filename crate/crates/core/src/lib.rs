//! Simulation and training engine for RIS-assisted active-sensing
//! localization with closed-loop one-bit uplink power control.

pub mod agents;
pub mod baselines;
pub mod channel;
pub mod config;
pub mod cosyne;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod pipeline;
pub mod rollout;
pub mod util;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
