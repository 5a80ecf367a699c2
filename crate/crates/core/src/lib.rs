//! Multi-period 2D temporal modeling for time series.
//!
//! The pipeline discovers the dominant periods of a series from its FFT
//! amplitude spectrum, folds the series into one 2D tensor per period,
//! processes every fold with a shared multi-scale convolution block, and
//! merges the results with amplitude-derived weights. On top of that
//! backbone sit forecasting, imputation, classification and
//! reconstruction (anomaly detection) heads, a training loop, and the
//! evaluation metrics used to judge them.

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod spectral;
pub mod tensor;
pub mod timesblock;
pub mod training;
pub mod transform2d;

pub use error::{Error, Result};
