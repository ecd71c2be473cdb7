//! Cost-aware sequential active learning simulation for video object
//! detection pools.

pub mod acquisition;
pub mod cli;
pub mod costing;
pub mod data_model;
pub mod error;
pub mod flowproxy;
pub mod metrics;
pub mod rng;
pub mod runner;
pub mod surrogate;
pub mod synth;

pub use error::{Error, Result};
