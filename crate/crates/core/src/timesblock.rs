//! The period-folding residual block.
//!
//! For every sample the block finds the `k` dominant frequencies of its
//! input, folds the series once per frequency, runs each fold through one
//! shared inception block, unfolds, and merges the `k` results with weights
//! derived from the spectral amplitudes. A residual connection and an
//! optional layer normalization close the block.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Bound, ParamId, ParamStore};
use crate::spectral::{discover_periods, PeriodSet};
use crate::tensor::{Graph, Tensor, Var};
use crate::transform2d::{fold, unfold_truncate, FoldPlan};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// How the `k` per-period outputs are merged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Softmax over the selected amplitudes.
    #[default]
    Softmax,
    /// Plain sum of the outputs.
    DirectSum,
    /// Raw amplitudes used as weights, no softmax.
    RawAmplitude,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Aggregation::Softmax),
            "direct-sum" | "directly-sum" => Ok(Aggregation::DirectSum),
            "raw-amplitude" | "no-softmax" => Ok(Aggregation::RawAmplitude),
            _ => Err(Error::InvalidArgument(format!("unknown aggregation `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Branch {
    kernel: ParamId,
    bias: ParamId,
    size: usize,
}

/// Two stacked multi-scale convolution layers, `d -> d -> d`.
///
/// Each layer runs `m` same-padded square kernels of sizes 1, 3, ..., 2m-1
/// in parallel and averages them. GELU sits between the layers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InceptionBlock {
    layers: [Vec<Branch>; 2],
    channels: usize,
}

impl InceptionBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        branches: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if branches == 0 {
            return Err(Error::InvalidArgument(
                "inception needs at least one branch".into(),
            ));
        }
        let mut make_layer = |layer: usize| -> Result<Vec<Branch>> {
            (0..branches)
                .map(|b| {
                    let size = 2 * b + 1;
                    let fan_in = size * size * channels;
                    let kernel = store.add_uniform(
                        format!("{name}.conv{layer}.k{size}.kernel"),
                        &[size, size, channels, channels],
                        fan_in,
                        rng,
                    )?;
                    let bias = store.add_uniform(
                        format!("{name}.conv{layer}.k{size}.bias"),
                        &[channels],
                        fan_in,
                        rng,
                    )?;
                    Ok(Branch { kernel, bias, size })
                })
                .collect()
        };
        let first = make_layer(0)?;
        let second = make_layer(1)?;
        Ok(InceptionBlock {
            layers: [first, second],
            channels,
        })
    }

    pub fn branches(&self) -> usize {
        self.layers[0].len()
    }

    pub fn kernel_sizes(&self) -> Vec<usize> {
        self.layers[0].iter().map(|b| b.size).collect()
    }

    /// `(kernel, bias)` parameter ids of layer `layer` (0 or 1), one per branch.
    pub fn branch_params(&self, layer: usize) -> Vec<(ParamId, ParamId)> {
        self.layers[layer]
            .iter()
            .map(|b| (b.kernel, b.bias))
            .collect()
    }

    fn layer(&self, g: &mut Graph, p: &Bound, x: Var, layer: usize) -> Result<Var> {
        let branches = &self.layers[layer];
        let mut acc: Option<Var> = None;
        for b in branches {
            let y = g.conv2d_same(x, p[b.kernel], p[b.bias])?;
            acc = Some(match acc {
                Some(a) => g.add(a, y)?,
                None => y,
            });
        }
        g.scale(acc.unwrap(), 1.0 / branches.len() as f64)
    }

    /// Shape-preserving map of `[B, H, W, d]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let dims = g.value(x).dims();
        if dims.len() != 4 || dims[3] != self.channels {
            return Err(Error::ShapeMismatch {
                op: "inception",
                left: dims.to_vec(),
                right: vec![self.channels],
            });
        }
        let h = self.layer(g, p, x, 0)?;
        let h = g.gelu(h)?;
        self.layer(g, p, h, 1)
    }
}

/// Hyper-parameters of one [`TimesBlock`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub d_model: usize,
    /// Inception branches per layer (kernel sizes 1, 3, ..., 2m-1).
    pub branches: usize,
    pub k: usize,
    pub aggregation: Aggregation,
    pub layer_norm: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimesBlock {
    pub inception: InceptionBlock,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub k: usize,
    pub aggregation: Aggregation,
    pub layer_norm: bool,
}

/// Result of one block on one sample.
#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub output: Var,
    pub periods: PeriodSet,
    /// Aggregation weights, one per selected period (absent for direct sum).
    pub weights: Option<Var>,
}

impl TimesBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &BlockConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let BlockConfig {
            d_model,
            branches,
            k,
            aggregation,
            layer_norm,
        } = *cfg;
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let inception =
            InceptionBlock::new(store, &format!("{name}.inception"), d_model, branches, rng)?;
        let gamma = store.add(format!("{name}.norm.gamma"), Tensor::ones(&[d_model])?);
        let beta = store.add(format!("{name}.norm.beta"), Tensor::zeros(&[d_model])?);
        Ok(TimesBlock {
            inception,
            gamma,
            beta,
            k,
            aggregation,
            layer_norm,
        })
    }

    /// One sample, `[T, d] -> [T, d]`.
    pub fn forward_sample(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<BlockOutput> {
        let dims = g.value(x).dims().to_vec();
        let [t, d] = dims[..] else {
            return Err(Error::InvalidArgument(format!(
                "timesblock expects [T, d] per sample, got {dims:?}"
            )));
        };
        let periods = discover_periods(g.value(x), self.k)?;
        let mut branch_out = Vec::with_capacity(periods.len());
        for e in &periods.entries {
            let plan = FoldPlan::new(t, e.frequency)?;
            let grid = fold(g, x, &plan)?;
            let grid = g.reshape(grid, &[1, plan.period, plan.frequency, d])?;
            let y = self.inception.forward(g, p, grid)?;
            let y = g.reshape(y, &[plan.period, plan.frequency, d])?;
            branch_out.push(unfold_truncate(g, y, &plan)?);
        }

        let weights = match self.aggregation {
            Aggregation::DirectSum => None,
            Aggregation::Softmax => {
                let amp = g.dft_amplitude(x, &periods.frequencies())?;
                Some(g.softmax(amp, 0)?)
            }
            Aggregation::RawAmplitude => Some(g.dft_amplitude(x, &periods.frequencies())?),
        };
        let mut acc: Option<Var> = None;
        for (i, &y) in branch_out.iter().enumerate() {
            let term = match weights {
                Some(w) => {
                    let wi = g.narrow(w, 0, i, 1)?;
                    g.mul_scalar_var(y, wi)?
                }
                None => y,
            };
            acc = Some(match acc {
                Some(a) => g.add(a, term)?,
                None => term,
            });
        }
        let out = g.add(acc.unwrap(), x)?;
        let output = if self.layer_norm {
            g.layer_norm(out, p[self.gamma], p[self.beta], LAYER_NORM_EPS)?
        } else {
            out
        };
        Ok(BlockOutput {
            output,
            periods,
            weights,
        })
    }

    /// Batched form, `[B, T, d] -> [B, T, d]`; periods are found per sample.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let dims = g.value(x).dims().to_vec();
        if dims.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "timesblock expects [B, T, d], got {dims:?}"
            )));
        }
        let outs = (0..dims[0])
            .map(|b| {
                let xb = g.select(x, b)?;
                Ok(self.forward_sample(g, p, xb)?.output)
            })
            .collect::<Result<Vec<_>>>()?;
        g.stack(&outs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn block(k: usize, m: usize, d: usize) -> (ParamStore, TimesBlock) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = BlockConfig {
            d_model: d,
            branches: m,
            k,
            aggregation: Aggregation::Softmax,
            layer_norm: true,
        };
        let b = TimesBlock::new(&mut store, "b", &cfg, &mut rng).unwrap();
        (store, b)
    }

    #[test]
    fn parameter_count_ignores_k() {
        let counts: Vec<usize> = (1..=8).map(|k| block(k, 3, 4).0.count()).collect();
        assert!(counts.windows(2).all(|w| w[0] == w[1]));
        // 2 layers x (1 + 9 + 25) taps x 4 x 4, plus biases and the norm
        assert_eq!(counts[0], 2 * (35 * 16 + 3 * 4) + 8);
    }

    #[test]
    fn zero_inception_is_zero_map() {
        let (mut store, b) = block(2, 3, 3);
        for layer in 0..2 {
            for (k, bias) in b.inception.branch_params(layer) {
                store.get_mut(k).data_mut().fill(0.0);
                store.get_mut(bias).data_mut().fill(0.0);
            }
        }
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::new(&[1, 3, 2, 3], (0..18).map(f64::from).collect()).unwrap());
        let y = b.inception.forward(&mut g, &p, x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn aggregation_parses() {
        assert_eq!(
            "softmax".parse::<Aggregation>().unwrap(),
            Aggregation::Softmax
        );
        assert_eq!(
            "direct-sum".parse::<Aggregation>().unwrap(),
            Aggregation::DirectSum
        );
        assert_eq!(
            "no-softmax".parse::<Aggregation>().unwrap(),
            Aggregation::RawAmplitude
        );
        assert!("mean".parse::<Aggregation>().is_err());
    }

    #[test]
    fn rejects_bad_shapes() {
        let (store, b) = block(1, 1, 2);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(&[1, 4, 3]).unwrap());
        assert!(b.forward_sample(&mut g, &p, x).is_err());
        let y = g.constant(Tensor::zeros(&[1, 2, 2, 3]).unwrap());
        assert!(b.inception.forward(&mut g, &p, y).is_err());
    }
}
