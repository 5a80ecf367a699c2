//! Amplitude spectra and dominant-period discovery.

pub mod fft;
mod periods;

pub use fft::{fft_real, FftPlan};
pub use periods::{discover_periods, rfft_amplitude, AmplitudeSpectrum, PeriodEntry, PeriodSet};
