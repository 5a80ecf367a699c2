use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::FftPlan;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Channel-averaged magnitude spectrum of a real `[T, C]` series.
///
/// Holds bins `0..=T/2`; bin 0 is the DC component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeSpectrum {
    amplitudes: Vec<f64>,
    series_length: usize,
}

impl AmplitudeSpectrum {
    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn series_length(&self) -> usize {
        self.series_length
    }

    /// Keeps the `k` strongest non-DC bins. Ties go to the lower frequency.
    /// With `k` larger than `T/2` every candidate bin is returned.
    pub fn top_k(&self, k: usize) -> PeriodSet {
        let t = self.series_length;
        let mut candidates: Vec<usize> = (1..=t / 2).collect();
        candidates.sort_by(|&a, &b| {
            self.amplitudes[b]
                .total_cmp(&self.amplitudes[a])
                .then(a.cmp(&b))
        });
        let entries = candidates
            .into_iter()
            .take(k)
            .map(|f| PeriodEntry {
                frequency: f,
                period: t.div_ceil(f),
                amplitude: self.amplitudes[f],
            })
            .collect();
        PeriodSet {
            entries,
            series_length: t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodEntry {
    pub frequency: usize,
    /// `ceil(T / frequency)`
    pub period: usize,
    pub amplitude: f64,
}

/// Selected frequencies, strongest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSet {
    pub entries: Vec<PeriodEntry>,
    pub series_length: usize,
}

impl PeriodSet {
    pub fn frequencies(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.frequency).collect()
    }

    pub fn periods(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.period).collect()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.amplitude).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn check_series(x: &Tensor) -> Result<(usize, usize)> {
    match x.dims() {
        &[t, c] if t >= 2 => Ok((t, c)),
        &[t, _] => Err(Error::InvalidArgument(format!(
            "period analysis needs at least 2 time steps, got {t}"
        ))),
        d => Err(Error::InvalidArgument(format!(
            "expected a [T, C] series, got shape {d:?}"
        ))),
    }
}

/// FFT magnitude per channel along time, averaged over channels.
pub fn rfft_amplitude(x: &Tensor) -> Result<AmplitudeSpectrum> {
    let (t, c) = check_series(x)?;
    let plan = FftPlan::new(t);
    let half = t / 2;
    let mut amplitudes = vec![0.0; half + 1];
    let mut buf = vec![Complex64::new(0.0, 0.0); t];
    let data = x.data();
    for ch in 0..c {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(data[i * c + ch], 0.0);
        }
        plan.process(&mut buf);
        for (a, b) in amplitudes.iter_mut().zip(&buf) {
            *a += b.norm();
        }
    }
    for a in &mut amplitudes {
        *a /= c as f64;
    }
    Ok(AmplitudeSpectrum {
        amplitudes,
        series_length: t,
    })
}

/// The `min(k, T/2)` dominant periods of a `[T, C]` series.
pub fn discover_periods(x: &Tensor, k: usize) -> Result<PeriodSet> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok(rfft_amplitude(x)?.top_k(k))
}
