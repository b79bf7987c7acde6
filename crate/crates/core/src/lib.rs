//! Semi-supervised anomaly detection for per-node HPC telemetry.
//!
//! One autoencoder is trained per node on healthy data. New records are
//! scored by reconstruction error and flagged when the error exceeds a
//! percentile threshold of the healthy error distribution.

pub mod autoencoder;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod seed;
pub mod synthgen;
pub mod telemetry;

pub use error::{Error, Result};
