use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::loss::{masked_sq_error_sum, LossKind};
use crate::config::Task;
use crate::data::{random_mask, Target, WindowSample};
use crate::error::{Error, Result};
use crate::model::{Head, TimesNet};
use crate::nn::ParamStore;
use crate::tensor::{Graph, Tensor, Var};

/// Environment variable capping the worker threads used for a batch.
pub const THREADS_ENV: &str = "TIMES2D_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossKind,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// When set, imputation training draws a fresh mask of this ratio for
    /// every sample in every epoch instead of using the stored one.
    #[serde(default)]
    pub mask_ratio: Option<f64>,
    /// Worker threads; `None` reads the environment and falls back to 1.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl TrainConfig {
    pub fn for_task(task: Task) -> Self {
        let d = task.defaults();
        TrainConfig {
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            epochs: d.epochs,
            loss: d.loss,
            seed: 0,
            patience: 3,
            mask_ratio: None,
            threads: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if let Some(r) = self.mask_ratio {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "mask ratio {r} outside (0, 1)"
                )));
            }
        }
        Ok(())
    }

    fn thread_count(&self) -> usize {
        self.threads
            .or_else(|| std::env::var(THREADS_ENV).ok()?.parse().ok())
            .unwrap_or(1)
            .max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters the model holds after training.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Loss summed over its terms, with the number of terms.
struct SampleLoss {
    sum: Var,
    count: usize,
}

fn sample_loss(
    model: &TimesNet,
    g: &mut Graph,
    p: &crate::nn::Bound,
    kind: LossKind,
    sample: &WindowSample,
) -> Result<SampleLoss> {
    let head = model.config().head;
    match (&sample.target, head) {
        (Target::Forecast(y), Head::Forecast { .. }) => {
            let pred = model.forecast_sample(g, p, &sample.input)?;
            let target = g.constant(y.clone());
            value_loss(g, kind, pred, target)
        }
        (Target::Reconstruction, Head::Reconstruction) => {
            let pred = model.reconstruct_sample(g, p, &sample.input)?;
            let target = g.constant(sample.input.clone());
            value_loss(g, kind, pred, target)
        }
        (Target::Imputation { mask }, Head::Imputation) => {
            if kind != LossKind::Mse {
                return Err(Error::InvalidArgument("imputation trains on MSE".into()));
            }
            let masked = masked_input(&sample.input, mask);
            let pred = model.impute_sample(g, p, &masked, mask)?;
            let target = g.constant(sample.input.clone());
            let (sum, count) = masked_sq_error_sum(g, pred, target, mask)?;
            Ok(SampleLoss { sum, count })
        }
        (Target::Class(label), Head::Classification { classes }) => {
            if kind != LossKind::CrossEntropy {
                return Err(Error::InvalidArgument(
                    "classification trains on cross-entropy".into(),
                ));
            }
            if *label >= classes {
                return Err(Error::InvalidArgument(format!(
                    "label {label} out of range for {classes} classes"
                )));
            }
            let logits = model.classify_sample(g, p, &sample.input)?;
            let sum = g.cross_entropy(logits, &[*label])?;
            Ok(SampleLoss { sum, count: 1 })
        }
        (t, h) => Err(Error::InvalidArgument(format!(
            "sample target {t:?} does not fit a {h:?} head"
        ))),
    }
}

fn value_loss(g: &mut Graph, kind: LossKind, pred: Var, target: Var) -> Result<SampleLoss> {
    let count = g.value(pred).numel();
    let sum = match kind {
        LossKind::Mse => {
            let d = g.sub(pred, target)?;
            let sq = g.square(d)?;
            g.sum(sq)?
        }
        LossKind::Smape => {
            let m = g.smape(pred, target)?;
            g.scale(m, count as f64)?
        }
        LossKind::CrossEntropy => {
            return Err(Error::InvalidArgument(
                "cross-entropy needs class targets".into(),
            ))
        }
    };
    Ok(SampleLoss { sum, count })
}

/// Zeroes the missing entries of a sample.
pub fn masked_input(x: &Tensor, mask: &Tensor) -> Tensor {
    let mut out = x.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(mask.data()) {
        if m == 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Loss sum, term count and (when requested) gradients for one sample.
fn evaluate_sample(
    model: &TimesNet,
    kind: LossKind,
    sample: &WindowSample,
    with_grad: bool,
) -> Result<(f64, usize, Option<Vec<Tensor>>)> {
    let mut g = Graph::new();
    let p = model.params().bind(&mut g, with_grad);
    let l = sample_loss(model, &mut g, &p, kind, sample)?;
    let value = g.value(l.sum).data()[0];
    if !with_grad {
        return Ok((value, l.count, None));
    }
    g.backward(l.sum)?;
    Ok((value, l.count, Some(model.params().gradients(&g, &p))))
}

fn run_samples<T: Send>(
    pool: Option<&rayon::ThreadPool>,
    samples: &[WindowSample],
    f: impl Fn(&WindowSample) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    match pool {
        Some(pool) => pool.install(|| samples.par_iter().map(&f).collect()),
        None => samples.iter().map(f).collect(),
    }
}

/// Mean loss per term over a set of samples, without gradients.
pub fn evaluate_loss(model: &TimesNet, samples: &[WindowSample], kind: LossKind) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    let (mut sum, mut count) = (0.0, 0);
    for s in samples {
        let (v, c, _) = evaluate_sample(model, kind, s, false)?;
        sum += v;
        count += c;
    }
    Ok(sum / count as f64)
}

fn with_fresh_mask(sample: &WindowSample, ratio: Option<f64>, seed: u64) -> Result<WindowSample> {
    match (ratio, &sample.target) {
        (Some(r), Target::Imputation { .. }) => random_mask(sample, r, seed),
        _ => Ok(sample.clone()),
    }
}

/// The validation windows [`train`] scores: imputation windows get masks
/// drawn once from the run seed, everything else is passed through.
pub fn validation_set(val: &[WindowSample], cfg: &TrainConfig) -> Result<Vec<WindowSample>> {
    val.iter()
        .enumerate()
        .map(|(i, s)| with_fresh_mask(s, cfg.mask_ratio, cfg.seed ^ 0x5eed_0000 ^ i as u64))
        .collect()
}

fn training_error(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite { .. } | Error::NonFiniteGradient(_) => Error::Diverged { epoch },
        e => e,
    }
}

/// Mini-batch Adam training with early stopping on validation loss.
///
/// Each batch gradient is the sum of per-sample gradients divided by the
/// total number of loss terms, reduced in sample order so the result does
/// not depend on the thread count. The parameters of the best epoch (by
/// validation loss, or training loss when `val` is empty) are restored
/// before returning. Zero epochs leave the model untouched.
pub fn train(
    model: &mut TimesNet,
    train: &[WindowSample],
    val: &[WindowSample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let threads = cfg.thread_count();
    let pool = if threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };
    let val = validation_set(val, cfg)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(cfg.learning_rate, model.params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut epoch_sum, mut epoch_count) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = chunk
                .iter()
                .map(|&i| {
                    let seed = cfg.seed ^ ((epoch as u64) << 40) ^ ((b as u64) << 20) ^ i as u64;
                    with_fresh_mask(&train[i], cfg.mask_ratio, seed)
                })
                .collect::<Result<Vec<_>>>()?;
            let results = run_samples(pool.as_ref(), &batch, |s| {
                evaluate_sample(model, cfg.loss, s, true)
            })
            .map_err(|e| training_error(e, epoch))?;

            let mut total: Option<Vec<Tensor>> = None;
            let mut count = 0;
            for (v, c, grads) in results {
                epoch_sum += v;
                count += c;
                let grads = grads.expect("gradients requested");
                match &mut total {
                    None => total = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(grads) {
                            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            epoch_count += count;
            let mut total = total.expect("non-empty batch");
            let inv = 1.0 / count as f64;
            for t in &mut total {
                t.data_mut().iter_mut().for_each(|x| *x *= inv);
            }
            adam.step(model.params_mut(), &total)
                .map_err(|e| training_error(e, epoch))?;
        }
        let train_loss = epoch_sum / epoch_count as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let val_loss = if val.is_empty() {
            None
        } else {
            let v = evaluate_loss(model, &val, cfg.loss).map_err(|e| training_error(e, epoch))?;
            if !v.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            Some(v)
        };
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });

        let score = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, model.params().clone()));
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }

    let best_epoch = match best {
        Some((_, epoch, params)) => {
            model.params_mut().load(&params)?;
            epoch
        }
        None => 0,
    };
    Ok(TrainReport {
        records,
        best_epoch,
        stopped_early,
    })
}
