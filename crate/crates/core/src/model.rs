//! The full network: embedding, stacked period blocks, and task heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Bound, Linear, ParamStore};
use crate::tensor::{Graph, Tensor, Var};
use crate::timesblock::{Aggregation, BlockConfig, TimesBlock};

/// Floor added to the variance before taking the square root when
/// normalizing a series.
pub const STATIONARIZE_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Head {
    Forecast { horizon: usize },
    Imputation,
    Classification { classes: usize },
    Reconstruction,
}

/// `min(max(2^ceil(log2 C), d_min), d_max)`
pub fn select_d_model(channels: usize, d_min: usize, d_max: usize) -> Result<usize> {
    if d_min > d_max {
        return Err(Error::InvalidArgument(format!(
            "d_min ({d_min}) exceeds d_max ({d_max})"
        )));
    }
    if channels == 0 {
        return Err(Error::InvalidArgument(
            "channel count must be positive".into(),
        ));
    }
    Ok(channels.next_power_of_two().max(d_min).min(d_max))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub seq_len: usize,
    pub channels: usize,
    pub head: Head,
    pub k: usize,
    pub layers: usize,
    pub d_min: usize,
    pub d_max: usize,
    /// Inception branches per layer.
    pub branches: usize,
    pub aggregation: Aggregation,
    pub layer_norm: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(seq_len: usize, channels: usize, head: Head) -> Self {
        ModelConfig {
            seq_len,
            channels,
            head,
            k: 3,
            layers: 2,
            d_min: 32,
            d_max: 512,
            branches: 3,
            aggregation: Aggregation::Softmax,
            layer_norm: true,
            seed: 0,
        }
    }

    pub fn d_model(&self) -> Result<usize> {
        select_d_model(self.channels, self.d_min, self.d_max)
    }

    /// Length of the sequence the blocks operate on.
    pub fn working_len(&self) -> usize {
        match self.head {
            Head::Forecast { horizon } => self.seq_len + horizon,
            _ => self.seq_len,
        }
    }
}

/// Per-channel location and scale of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StationarizationStats {
    /// Statistics of a `[T, C]` series; with a mask only points where the
    /// mask is 1 count.
    pub fn from_series(x: &Tensor, mask: Option<&Tensor>) -> Result<Self> {
        let [t, c] = x.dims()[..] else {
            return Err(Error::InvalidArgument(format!(
                "expected a [T, C] series, got {:?}",
                x.dims()
            )));
        };
        if let Some(m) = mask {
            if m.dims() != x.dims() {
                return Err(Error::ShapeMismatch {
                    op: "mask",
                    left: x.dims().to_vec(),
                    right: m.dims().to_vec(),
                });
            }
        }
        let w = |i: usize| mask.map_or(1.0, |m| m.data()[i]);
        let data = x.data();
        let mut mean = vec![0.0; c];
        let mut std = vec![0.0; c];
        for ch in 0..c {
            let (mut n, mut s) = (0.0, 0.0);
            for ti in 0..t {
                let i = ti * c + ch;
                n += w(i);
                s += w(i) * data[i];
            }
            if n == 0.0 {
                return Err(Error::NoObservedPoints {
                    sample: 0,
                    channel: ch,
                });
            }
            let mu = s / n;
            let var = (0..t)
                .map(|ti| {
                    let i = ti * c + ch;
                    w(i) * (data[i] - mu).powi(2)
                })
                .sum::<f64>()
                / n;
            mean[ch] = mu;
            std[ch] = (var + STATIONARIZE_EPS).sqrt();
        }
        Ok(StationarizationStats { mean, std })
    }

    /// `(x - mean) / std`, zeroed where the mask is 0.
    pub fn normalize(&self, x: &Tensor, mask: Option<&Tensor>) -> Tensor {
        let c = self.mean.len();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let ch = i % c;
            let keep = mask.map_or(1.0, |m| m.data()[i]);
            *v = if keep == 0.0 {
                0.0
            } else {
                (*v - self.mean[ch]) / self.std[ch]
            };
        }
        out
    }

    pub fn denormalize(&self, y: &Tensor) -> Tensor {
        let c = self.mean.len();
        let mut out = y.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * self.std[i % c] + self.mean[i % c];
        }
        out
    }

    fn denormalize_var(&self, g: &mut Graph, y: Var) -> Result<Var> {
        let c = self.mean.len();
        let s = g.constant(Tensor::new(&[c], self.std.clone())?);
        let m = g.constant(Tensor::new(&[c], self.mean.clone())?);
        let y = g.mul(y, s)?;
        g.add(y, m)
    }
}

/// Fixed sinusoidal position table, `[len, d]`.
pub fn positional_encoding(len: usize, d: usize) -> Result<Tensor> {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let pair = (i / 2 * 2) as f64;
            let angle = pos as f64 / 10000f64.powf(pair / d as f64);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(&[len, d], data)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimesNet {
    config: ModelConfig,
    d_model: usize,
    store: ParamStore,
    embedding: Linear,
    extender: Option<Linear>,
    blocks: Vec<TimesBlock>,
    head: Linear,
}

impl TimesNet {
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.seq_len < 2 {
            return Err(Error::InvalidArgument("seq_len must be at least 2".into()));
        }
        if config.layers == 0 {
            return Err(Error::InvalidArgument(
                "at least one block is required".into(),
            ));
        }
        let d = config.d_model()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let embedding = Linear::new(&mut store, "embedding", config.channels, d, &mut rng)?;
        let extender = match config.head {
            Head::Forecast { horizon: 0 } => {
                return Err(Error::InvalidArgument(
                    "forecast horizon must be positive".into(),
                ))
            }
            Head::Forecast { horizon } => Some(Linear::new(
                &mut store,
                "extender",
                config.seq_len,
                config.seq_len + horizon,
                &mut rng,
            )?),
            _ => None,
        };
        let block_cfg = BlockConfig {
            d_model: d,
            branches: config.branches,
            k: config.k,
            aggregation: config.aggregation,
            layer_norm: config.layer_norm,
        };
        let blocks = (0..config.layers)
            .map(|l| TimesBlock::new(&mut store, &format!("block{l}"), &block_cfg, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let head = match config.head {
            Head::Classification { classes } if classes < 2 => {
                return Err(Error::InvalidArgument("need at least two classes".into()))
            }
            Head::Classification { classes } => {
                Linear::new(&mut store, "head", config.seq_len * d, classes, &mut rng)?
            }
            _ => Linear::new(&mut store, "head", d, config.channels, &mut rng)?,
        };
        Ok(TimesNet {
            config,
            d_model: d,
            store,
            embedding,
            extender,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_params(&self) -> usize {
        self.store.count()
    }

    pub fn blocks(&self) -> &[TimesBlock] {
        &self.blocks
    }

    /// Zeroes the output projection.
    pub fn zero_head(&mut self) {
        self.head.zero(&mut self.store);
    }

    fn check_sample(&self, x: &Tensor) -> Result<()> {
        match x.dims() {
            &[t, c] if t == self.config.seq_len && c == self.config.channels => Ok(()),
            &[_, c] if c != self.config.channels => Err(Error::ChannelMismatch {
                expected: self.config.channels,
                found: c,
            }),
            d => Err(Error::ShapeMismatch {
                op: "model input",
                left: d.to_vec(),
                right: vec![self.config.seq_len, self.config.channels],
            }),
        }
    }

    fn embed(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let len = g.value(x).dims()[0];
        let h = self.embedding.forward(g, p, x)?;
        let pe = g.constant(positional_encoding(len, self.d_model)?);
        g.add(h, pe)
    }

    fn run_blocks(&self, g: &mut Graph, p: &Bound, mut h: Var) -> Result<Var> {
        for b in &self.blocks {
            h = b.forward_sample(g, p, h)?.output;
        }
        Ok(h)
    }

    fn expect_head(&self, want: &str) -> Result<()> {
        let ok = matches!(
            (want, self.config.head),
            ("forecast", Head::Forecast { .. })
                | ("imputation", Head::Imputation)
                | ("classification", Head::Classification { .. })
                | ("reconstruction", Head::Reconstruction)
        );
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "model has a {:?} head, not {want}",
                self.config.head
            )))
        }
    }

    /// One `[T, C]` sample to its `[H, C]` forecast.
    pub fn forecast_sample(&self, g: &mut Graph, p: &Bound, x: &Tensor) -> Result<Var> {
        self.expect_head("forecast")?;
        self.check_sample(x)?;
        let Head::Forecast { horizon } = self.config.head else {
            unreachable!()
        };
        let stats = StationarizationStats::from_series(x, None)?;
        let xn = g.constant(stats.normalize(x, None));
        let h = self.embed(g, p, xn)?;
        let ext = self
            .extender
            .as_ref()
            .expect("forecast head has an extender");
        let ht = g.permute(h, &[1, 0])?;
        let ht = ext.forward(g, p, ht)?;
        let h = g.permute(ht, &[1, 0])?;
        let h = self.run_blocks(g, p, h)?;
        let y = self.head.forward(g, p, h)?;
        let y = stats.denormalize_var(g, y)?;
        g.narrow(y, 0, self.config.seq_len, horizon)
    }

    /// Full-length `[T, C]` output for a partially observed sample, before
    /// observed points are restored.
    pub fn impute_sample(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: &Tensor,
        mask: &Tensor,
    ) -> Result<Var> {
        self.expect_head("imputation")?;
        self.check_sample(x)?;
        let stats = StationarizationStats::from_series(x, Some(mask))?;
        let xn = g.constant(stats.normalize(x, Some(mask)));
        let h = self.embed(g, p, xn)?;
        let h = self.run_blocks(g, p, h)?;
        let y = self.head.forward(g, p, h)?;
        stats.denormalize_var(g, y)
    }

    /// Class logits, `[1, classes]`.
    pub fn classify_sample(&self, g: &mut Graph, p: &Bound, x: &Tensor) -> Result<Var> {
        self.expect_head("classification")?;
        self.check_sample(x)?;
        let xv = g.constant(x.clone());
        let h = self.embed(g, p, xv)?;
        let h = self.run_blocks(g, p, h)?;
        let flat = g.reshape(h, &[1, self.config.seq_len * self.d_model])?;
        self.head.forward(g, p, flat)
    }

    pub fn reconstruct_sample(&self, g: &mut Graph, p: &Bound, x: &Tensor) -> Result<Var> {
        self.expect_head("reconstruction")?;
        self.check_sample(x)?;
        let stats = StationarizationStats::from_series(x, None)?;
        let xn = g.constant(stats.normalize(x, None));
        let h = self.embed(g, p, xn)?;
        let h = self.run_blocks(g, p, h)?;
        let y = self.head.forward(g, p, h)?;
        stats.denormalize_var(g, y)
    }

    fn per_sample(
        &self,
        x: &Tensor,
        mut f: impl FnMut(&mut Graph, &Bound, usize, &Tensor) -> Result<Tensor>,
    ) -> Result<Tensor> {
        if x.dims().len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "expected a [B, T, C] batch, got {:?}",
                x.dims()
            )));
        }
        let outs = (0..x.dims()[0])
            .map(|b| {
                let mut g = Graph::new();
                let p = self.store.bind(&mut g, false);
                f(&mut g, &p, b, &x.index_axis0(b)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&outs)
    }

    /// `[B, T, C] -> [B, H, C]`
    pub fn forecast(&self, x: &Tensor) -> Result<Tensor> {
        self.per_sample(x, |g, p, _, xb| {
            let y = self.forecast_sample(g, p, xb)?;
            Ok(g.value(y).clone())
        })
    }

    /// Fills the points where `mask` is 0; observed points are returned as given.
    pub fn impute(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        if mask.dims() != x.dims() {
            return Err(Error::ShapeMismatch {
                op: "impute",
                left: x.dims().to_vec(),
                right: mask.dims().to_vec(),
            });
        }
        self.per_sample(x, |g, p, b, xb| {
            let mb = mask.index_axis0(b)?;
            let y = self.impute_sample(g, p, xb, &mb).map_err(|e| match e {
                Error::NoObservedPoints { channel, .. } => {
                    Error::NoObservedPoints { sample: b, channel }
                }
                e => e,
            })?;
            let mut out = g.value(y).clone();
            for ((o, &m), &v) in out.data_mut().iter_mut().zip(mb.data()).zip(xb.data()) {
                if m != 0.0 {
                    *o = v;
                }
            }
            Ok(out)
        })
    }

    /// `[B, T, C] -> [B, classes]` logits.
    pub fn classify(&self, x: &Tensor) -> Result<Tensor> {
        let out = self.per_sample(x, |g, p, _, xb| {
            let y = self.classify_sample(g, p, xb)?;
            g.value(y).clone().reshape(&[g.value(y).numel()])
        })?;
        Ok(out)
    }

    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.per_sample(x, |g, p, _, xb| {
            let y = self.reconstruct_sample(g, p, xb)?;
            Ok(g.value(y).clone())
        })
    }

    /// Outputs of the embedding and of every block for one sample, each
    /// `[L, d_model]`, on the path the configured head uses.
    pub fn layer_representations(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.check_sample(x)?;
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let input = match self.config.head {
            Head::Classification { .. } => x.clone(),
            _ => {
                let stats = StationarizationStats::from_series(x, None)?;
                stats.normalize(x, None)
            }
        };
        let xv = g.constant(input);
        let mut h = self.embed(&mut g, &p, xv)?;
        if let Some(ext) = &self.extender {
            let ht = g.permute(h, &[1, 0])?;
            let ht = ext.forward(&mut g, &p, ht)?;
            h = g.permute(ht, &[1, 0])?;
        }
        let mut reps = vec![g.value(h).clone()];
        for b in &self.blocks {
            h = b.forward_sample(&mut g, &p, h)?.output;
            reps.push(g.value(h).clone());
        }
        Ok(reps)
    }
}
