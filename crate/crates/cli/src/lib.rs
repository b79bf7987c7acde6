//! Command-line workflow: generate a synthetic fleet, train one autoencoder
//! per node, evaluate detection quality and score new telemetry.

pub mod commands;
pub mod config;

pub use config::{parse_percentiles, RunConfig};
