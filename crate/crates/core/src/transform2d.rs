//! Folding a 1D series into a (period x cycles) grid and back.
//!
//! A series of length `T` folded at frequency `f` becomes a grid with
//! `p = ceil(T / f)` rows and `f` columns. Column `c` holds the `c`-th
//! consecutive period, so rows line up same-phase points of successive
//! periods. The tail is zero-padded to `p * f`; unfolding drops it again.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub series_length: usize,
    pub period: usize,
    pub frequency: usize,
    pub pad_length: usize,
}

impl FoldPlan {
    pub fn new(series_length: usize, frequency: usize) -> Result<Self> {
        if frequency == 0 || frequency > series_length {
            return Err(Error::InvalidArgument(format!(
                "fold frequency {frequency} outside 1..={series_length}"
            )));
        }
        let period = series_length.div_ceil(frequency);
        Ok(FoldPlan {
            series_length,
            period,
            frequency,
            pad_length: period * frequency - series_length,
        })
    }

    /// Source index in a `[T, D]` buffer for every cell of the `[p, f, D]` grid.
    pub fn fold_index(&self, channels: usize) -> Vec<Option<usize>> {
        let (p, f, t) = (self.period, self.frequency, self.series_length);
        let mut idx = Vec::with_capacity(p * f * channels);
        for r in 0..p {
            for c in 0..f {
                let pos = c * p + r;
                for d in 0..channels {
                    idx.push((pos < t).then_some(pos * channels + d));
                }
            }
        }
        idx
    }

    /// Source index in a `[p, f, D]` grid for every cell of the `[T, D]` series.
    pub fn unfold_index(&self, channels: usize) -> Vec<Option<usize>> {
        let (p, f) = (self.period, self.frequency);
        let mut idx = Vec::with_capacity(self.series_length * channels);
        for t in 0..self.series_length {
            let (r, c) = (t % p, t / p);
            for d in 0..channels {
                idx.push(Some((r * f + c) * channels + d));
            }
        }
        idx
    }

    fn check_series(&self, dims: &[usize]) -> Result<usize> {
        match *dims {
            [t, d] if t == self.series_length => Ok(d),
            _ => Err(Error::ShapeMismatch {
                op: "fold",
                left: dims.to_vec(),
                right: vec![self.series_length],
            }),
        }
    }

    fn check_grid(&self, dims: &[usize]) -> Result<usize> {
        match *dims {
            [p, f, d] if p == self.period && f == self.frequency => Ok(d),
            _ => Err(Error::ShapeMismatch {
                op: "unfold_truncate",
                left: dims.to_vec(),
                right: vec![self.period, self.frequency],
            }),
        }
    }
}

/// Zero-pads a `[T, D]` series to `p * f` steps and lays it out as `[p, f, D]`.
pub fn fold(g: &mut Graph, x: Var, plan: &FoldPlan) -> Result<Var> {
    let d = plan.check_series(g.value(x).dims())?;
    g.gather(x, &plan.fold_index(d), &[plan.period, plan.frequency, d])
}

/// Inverse layout of [`fold`], discarding the padded tail.
pub fn unfold_truncate(g: &mut Graph, y: Var, plan: &FoldPlan) -> Result<Var> {
    let d = plan.check_grid(g.value(y).dims())?;
    g.gather(y, &plan.unfold_index(d), &[plan.series_length, d])
}

fn gather_values(src: &Tensor, index: &[Option<usize>], dims: &[usize]) -> Result<Tensor> {
    let data = index
        .iter()
        .map(|ix| ix.map_or(0.0, |i| src.data()[i]))
        .collect();
    Tensor::new(dims, data)
}

/// [`fold`] on plain values.
pub fn fold_tensor(x: &Tensor, plan: &FoldPlan) -> Result<Tensor> {
    let d = plan.check_series(x.dims())?;
    gather_values(x, &plan.fold_index(d), &[plan.period, plan.frequency, d])
}

/// [`unfold_truncate`] on plain values.
pub fn unfold_tensor(y: &Tensor, plan: &FoldPlan) -> Result<Tensor> {
    let d = plan.check_grid(y.dims())?;
    gather_values(y, &plan.unfold_index(d), &[plan.series_length, d])
}
