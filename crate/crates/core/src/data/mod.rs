//! Series ingestion, windowing, masking and synthetic generators.

mod csv_io;
mod mask;
mod synth;
mod windows;

pub use csv_io::{load_csv, load_mask_csv, write_csv};
pub use mask::random_mask;
pub use synth::{inject_anomalies, synth_multiperiodic, Component};
pub use windows::{
    make_windows, split_bounds, Split, SplitFractions, Target, WindowSample, WindowTask,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A multichannel series, `values` shaped `[T_total, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub values: Tensor,
    pub channel_names: Vec<String>,
    /// Carried through from the input file; the model never reads them.
    pub timestamps: Option<Vec<String>>,
}

impl RawSeries {
    pub fn new(values: Tensor, channel_names: Vec<String>) -> Result<Self> {
        if values.dims().len() != 2 || values.dims()[1] != channel_names.len() {
            return Err(Error::ShapeMismatch {
                op: "series",
                left: values.dims().to_vec(),
                right: vec![channel_names.len()],
            });
        }
        Ok(RawSeries {
            values,
            channel_names,
            timestamps: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.dims()[1]
    }

    pub fn value(&self, t: usize, c: usize) -> f64 {
        self.values.data()[t * self.channels() + c]
    }

    /// Values of one channel in time order.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.value(t, c)).collect()
    }

    /// Rows `[start, end)` as a `[end - start, C]` tensor.
    pub fn rows(&self, start: usize, end: usize) -> Result<Tensor> {
        let c = self.channels();
        if start >= end || end > self.len() {
            return Err(Error::InvalidArgument(format!(
                "row range [{start}, {end}) outside series of length {}",
                self.len()
            )));
        }
        Tensor::new(
            &[end - start, c],
            self.values.data()[start * c..end * c].to_vec(),
        )
    }

    /// Removes the named channel and returns its values.
    pub fn take_channel(&mut self, name: &str) -> Option<Vec<f64>> {
        let idx = self.channel_names.iter().position(|n| n == name)?;
        let taken = self.channel(idx);
        let (t, c) = (self.len(), self.channels());
        if c == 1 {
            return None;
        }
        let data: Vec<f64> = self
            .values
            .data()
            .iter()
            .enumerate()
            .filter(|(i, _)| i % c != idx)
            .map(|(_, &v)| v)
            .collect();
        self.values = Tensor::new(&[t, c - 1], data).ok()?;
        self.channel_names.remove(idx);
        Some(taken)
    }
}

/// Per-channel standardization fitted on a prefix of the series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Fits on rows `[0, rows)`; zero-variance channels get unit scale.
    pub fn fit(series: &RawSeries, rows: usize) -> Result<Self> {
        if rows == 0 || rows > series.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot fit scaler on {rows} rows of {}",
                series.len()
            )));
        }
        let c = series.channels();
        let mut mean = vec![0.0; c];
        let mut std = vec![0.0; c];
        for ch in 0..c {
            let vals: Vec<f64> = (0..rows).map(|t| series.value(t, ch)).collect();
            let mu = vals.iter().sum::<f64>() / rows as f64;
            let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / rows as f64;
            mean[ch] = mu;
            std[ch] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Ok(Scaler { mean, std })
    }

    pub fn transform(&self, series: &RawSeries) -> RawSeries {
        let c = series.channels();
        let mut out = series.clone();
        for (i, v) in out.values.data_mut().iter_mut().enumerate() {
            *v = (*v - self.mean[i % c]) / self.std[i % c];
        }
        out
    }
}
