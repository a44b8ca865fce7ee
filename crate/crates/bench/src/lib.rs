//! Experiment harness for the spingp engine: synthetic and CO₂ data,
//! hyperparameter fits, forecasts, and timing sweeps over N and b.

pub mod co2;
pub mod config;
pub mod error;
pub mod fit;
pub mod kernel_expr;
pub mod report;
pub mod scaling;
pub mod synth;
pub mod timing;

pub use error::{BenchError, Result};
