use serde::{Deserialize, Serialize};

use super::RawSeries;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Chronological split proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub const ALL_TRAIN: SplitFractions = SplitFractions {
        train: 1.0,
        val: 0.0,
        test: 0.0,
    };

    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let ok = [train, val, test].iter().all(|f| (0.0..=1.0).contains(f))
            && train + val + test <= 1.0 + 1e-9;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "invalid split fractions ({train}, {val}, {test})"
            )));
        }
        Ok(SplitFractions { train, val, test })
    }
}

/// Row ranges `[start, end)` of train, validation and test.
///
/// Boundaries are `floor(n * cumulative fraction)`; when the fractions sum
/// to one the test split runs to the end of the series.
pub fn split_bounds(n: usize, f: &SplitFractions) -> [(Split, usize, usize); 3] {
    let b1 = (n as f64 * f.train).floor() as usize;
    let b2 = ((n as f64 * (f.train + f.val)).floor() as usize).max(b1);
    let total = f.train + f.val + f.test;
    let b3 = if (total - 1.0).abs() < 1e-9 {
        n
    } else {
        ((n as f64 * total).floor() as usize).clamp(b2, n)
    };
    [
        (Split::Train, 0, b1.min(n)),
        (Split::Val, b1.min(n), b2.min(n)),
        (Split::Test, b2.min(n), b3),
    ]
}

/// What each window is paired with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowTask {
    Forecast { horizon: usize },
    Imputation,
    Classification { label: usize },
    Reconstruction,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// The `[H, C]` steps after the input window.
    Forecast(Tensor),
    /// Observation mask over the input: 1 observed, 0 missing.
    Imputation {
        mask: Tensor,
    },
    Class(usize),
    Reconstruction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// `[T, C]`
    pub input: Tensor,
    pub target: Target,
    pub split: Split,
    /// Row of the series where the window starts.
    pub offset: usize,
}

/// Slides a length-`seq_len` window (plus the forecast horizon) across each
/// split with the given stride; windows never cross a split boundary.
pub fn make_windows(
    series: &RawSeries,
    task: WindowTask,
    seq_len: usize,
    splits: &SplitFractions,
    stride: usize,
) -> Result<Vec<WindowSample>> {
    if seq_len == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "window length and stride must be positive".into(),
        ));
    }
    let horizon = match task {
        WindowTask::Forecast { horizon } => horizon,
        _ => 0,
    };
    let span = seq_len + horizon;
    let fractions = [splits.train, splits.val, splits.test];
    let mut out = Vec::new();
    for ((split, start, end), frac) in split_bounds(series.len(), splits)
        .into_iter()
        .zip(fractions)
    {
        if frac == 0.0 {
            continue;
        }
        if end - start < span {
            return Err(Error::InvalidArgument(format!(
                "{split:?} split has {} rows, fewer than one window of {span}",
                end - start
            )));
        }
        let mut offset = start;
        while offset + span <= end {
            let input = series.rows(offset, offset + seq_len)?;
            let target = match task {
                WindowTask::Forecast { .. } => {
                    Target::Forecast(series.rows(offset + seq_len, offset + span)?)
                }
                WindowTask::Imputation => Target::Imputation {
                    mask: Tensor::ones(input.dims())?,
                },
                WindowTask::Classification { label } => Target::Class(label),
                WindowTask::Reconstruction => Target::Reconstruction,
            };
            out.push(WindowSample {
                input,
                target,
                split,
                offset,
            });
            offset += stride;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> RawSeries {
        RawSeries::new(
            Tensor::new(&[n, 1], (0..n).map(|v| v as f64).collect()).unwrap(),
            vec!["x".into()],
        )
        .unwrap()
    }

    #[test]
    fn forecast_window_count() {
        let w = make_windows(
            &ramp(10),
            WindowTask::Forecast { horizon: 2 },
            4,
            &SplitFractions::ALL_TRAIN,
            1,
        )
        .unwrap();
        assert_eq!(w.len(), 5);
        assert_eq!(w[4].input.data(), &[4., 5., 6., 7.]);
        assert_eq!(
            w[4].target,
            Target::Forecast(Tensor::new(&[2, 1], vec![8., 9.]).unwrap())
        );
    }

    #[test]
    fn stride_equal_to_length_gives_segments() {
        let w = make_windows(
            &ramp(10),
            WindowTask::Reconstruction,
            3,
            &SplitFractions::ALL_TRAIN,
            3,
        )
        .unwrap();
        let offsets: Vec<usize> = w.iter().map(|s| s.offset).collect();
        assert_eq!(offsets, vec![0, 3, 6]);
    }

    #[test]
    fn short_split_is_an_error() {
        let f = SplitFractions::new(0.5, 0.1, 0.4).unwrap();
        assert!(make_windows(&ramp(20), WindowTask::Reconstruction, 4, &f, 1).is_err());
    }

    #[test]
    fn fractions_validated() {
        assert!(SplitFractions::new(0.7, 0.2, 0.2).is_err());
        assert!(SplitFractions::new(-0.1, 0.5, 0.5).is_err());
        let b = split_bounds(100, &SplitFractions::new(0.6, 0.2, 0.2).unwrap());
        assert_eq!(b.map(|(_, s, e)| (s, e)), [(0, 60), (60, 80), (80, 100)]);
    }
}
