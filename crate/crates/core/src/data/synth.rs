use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::RawSeries;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One sinusoid: `amplitude * sin(2 pi t / period + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub period: f64,
    pub amplitude: f64,
    pub phase: f64,
}

/// Sum of sinusoids plus a linear trend plus Gaussian noise. Every channel
/// shares the deterministic part; noise is drawn independently per entry.
pub fn synth_multiperiodic(
    len: usize,
    channels: usize,
    components: &[Component],
    trend_slope: f64,
    noise_std: f64,
    seed: u64,
) -> Result<RawSeries> {
    if len == 0 || channels == 0 {
        return Err(Error::InvalidArgument("empty series requested".into()));
    }
    if let Some(c) = components
        .iter()
        .find(|c| c.period.is_nan() || c.period < 2.0)
    {
        return Err(Error::InvalidArgument(format!(
            "component period {} is below 2",
            c.period
        )));
    }
    let noise =
        Normal::new(0.0, noise_std.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(len * channels);
    for t in 0..len {
        let clean: f64 = components
            .iter()
            .map(|c| c.amplitude * (2.0 * PI * t as f64 / c.period + c.phase).sin())
            .sum::<f64>()
            + trend_slope * t as f64;
        for _ in 0..channels {
            let eps = if noise_std > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            data.push(clean + eps);
        }
    }
    RawSeries::new(
        Tensor::new(&[len, channels], data)?,
        (0..channels).map(|c| format!("ch{c}")).collect(),
    )
}

/// Adds `n_spikes` spikes of `+-magnitude_sigma * sigma_c` at distinct
/// uniformly drawn time points (all channels), returning per-point labels.
pub fn inject_anomalies(
    series: &RawSeries,
    n_spikes: usize,
    magnitude_sigma: f64,
    seed: u64,
) -> Result<(RawSeries, Vec<bool>)> {
    let len = series.len();
    if n_spikes > 0 && n_spikes * 10 >= len {
        return Err(Error::InvalidArgument(format!(
            "{n_spikes} spikes is too many for a series of {len} points"
        )));
    }
    let c = series.channels();
    let sigma: Vec<f64> = (0..c)
        .map(|ch| {
            let v = series.channel(ch);
            let mu = v.iter().sum::<f64>() / len as f64;
            (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / len as f64).sqrt()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = series.clone();
    let mut labels = vec![false; len];
    let mut positions: Vec<usize> = rand::seq::index::sample(&mut rng, len, n_spikes).into_vec();
    positions.sort_unstable();
    for t in positions {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        labels[t] = true;
        let row = &mut out.values.data_mut()[t * c..(t + 1) * c];
        for (v, s) in row.iter_mut().zip(&sigma) {
            *v += sign * magnitude_sigma * s;
        }
    }
    Ok((out, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_clean_component() {
        let c = Component {
            period: 24.0,
            amplitude: 1.0,
            phase: 0.0,
        };
        let s = synth_multiperiodic(100, 2, &[c], 0.0, 0.0, 0).unwrap();
        for t in 0..100 {
            let want = (2.0 * PI * t as f64 / 24.0).sin();
            assert_eq!(s.value(t, 0), want);
            assert_eq!(s.value(t, 1), want);
        }
    }

    #[test]
    fn seeded_noise() {
        let a = synth_multiperiodic(64, 3, &[], 0.1, 1.0, 5).unwrap();
        let b = synth_multiperiodic(64, 3, &[], 0.1, 1.0, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.value(0, 0), a.value(0, 1));
    }

    #[test]
    fn rejects_short_period() {
        let c = Component {
            period: 1.0,
            amplitude: 1.0,
            phase: 0.0,
        };
        assert!(synth_multiperiodic(10, 1, &[c], 0.0, 0.0, 0).is_err());
    }

    #[test]
    fn spike_counts() {
        let c = Component {
            period: 12.0,
            amplitude: 1.0,
            phase: 0.3,
        };
        let s = synth_multiperiodic(200, 2, &[c], 0.0, 0.0, 1).unwrap();
        let (same, labels) = inject_anomalies(&s, 0, 8.0, 3).unwrap();
        assert_eq!(same, s);
        assert!(labels.iter().all(|&l| !l));
        let (spiked, labels) = inject_anomalies(&s, 5, 8.0, 3).unwrap();
        assert_eq!(labels.iter().filter(|&&l| l).count(), 5);
        for (t, &l) in labels.iter().enumerate() {
            assert_eq!(spiked.value(t, 0) != s.value(t, 0), l);
        }
        assert!(inject_anomalies(&s, 20, 8.0, 3).is_err());
    }
}
