//! Dynamic pool of segment reconstruction models for multivariate time-series
//! anomaly detection.

pub mod codec;
pub mod config;
pub mod detect;
pub mod ensemble;
pub mod error;
pub mod features;
pub mod merge;
pub mod meta;
pub mod model;
pub mod mts;
pub mod nn;
pub mod pipeline;
pub mod pool;
pub mod synth;

pub use error::{Error, Result};
