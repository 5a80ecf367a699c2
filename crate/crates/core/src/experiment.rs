//! Evaluation of a trained model on windowed data, and the synthetic
//! benchmark tasks used to exercise every head end to end.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::Task;
use crate::data::{
    inject_anomalies, make_windows, random_mask, synth_multiperiodic, Component, Split,
    SplitFractions, Target, WindowSample, WindowTask,
};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, anomaly_eval, mae, mse, EvalReport};
use crate::model::{Head, ModelConfig, TimesNet};
use crate::tensor::Tensor;
use crate::timesblock::Aggregation;
use crate::training::{train, TrainConfig, TrainReport};

fn stack_inputs(samples: &[WindowSample]) -> Result<Tensor> {
    let inputs: Vec<Tensor> = samples.iter().map(|s| s.input.clone()).collect();
    Tensor::stack(&inputs)
}

fn empty(op: &str) -> Error {
    Error::InvalidArgument(format!("{op} over zero windows"))
}

/// Scores `samples` with the metric that fits the model head: MSE and MAE
/// for forecasts and reconstructions, masked-point MSE (plus the zero-fill
/// baseline) for imputation, accuracy for classification.
pub fn evaluate(model: &TimesNet, samples: &[WindowSample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(empty("evaluation"));
    }
    let x = stack_inputs(samples)?;
    let mut report = EvalReport::new(samples.len(), model.config().channels);
    match model.config().head {
        Head::Forecast { .. } => {
            let pred = model.forecast(&x)?;
            let mut target = Vec::with_capacity(pred.numel());
            for s in samples {
                let Target::Forecast(y) = &s.target else {
                    return Err(Error::InvalidArgument(
                        "forecast head needs forecast targets".into(),
                    ));
                };
                target.extend_from_slice(y.data());
            }
            report
                .insert("mse", mse(pred.data(), &target)?)
                .insert("mae", mae(pred.data(), &target)?);
        }
        Head::Imputation => {
            let mut masks = Vec::with_capacity(samples.len());
            for s in samples {
                let Target::Imputation { mask } = &s.target else {
                    return Err(Error::InvalidArgument("imputation head needs masks".into()));
                };
                masks.push(mask.clone());
            }
            let mask = Tensor::stack(&masks)?;
            let observed = x
                .data()
                .iter()
                .zip(mask.data())
                .map(|(v, m)| v * m)
                .collect();
            let pred = model.impute(&Tensor::new(x.dims(), observed)?, &mask)?;
            let (mut p, mut y) = (Vec::new(), Vec::new());
            for ((&m, &a), &b) in mask.data().iter().zip(pred.data()).zip(x.data()) {
                if m == 0.0 {
                    p.push(a);
                    y.push(b);
                }
            }
            let zeros = vec![0.0; y.len()];
            let model_mse = mse(&p, &y)?;
            let zero_mse = mse(&zeros, &y)?;
            report
                .insert("mse", model_mse)
                .insert("mae", mae(&p, &y)?)
                .insert("zero_fill_mse", zero_mse)
                .insert("masked_points", y.len() as f64);
        }
        Head::Classification { .. } => {
            let logits = model.classify(&x)?;
            let classes = logits.dims()[1];
            let rows: Vec<Vec<f64>> = logits.data().chunks(classes).map(<[f64]>::to_vec).collect();
            let mut labels = Vec::with_capacity(samples.len());
            for s in samples {
                let Target::Class(c) = s.target else {
                    return Err(Error::InvalidArgument(
                        "classification head needs labels".into(),
                    ));
                };
                labels.push(c);
            }
            report.insert("accuracy", accuracy(&rows, &labels)?);
        }
        Head::Reconstruction => {
            let pred = model.reconstruct(&x)?;
            report
                .insert("mse", mse(pred.data(), x.data())?)
                .insert("mae", mae(pred.data(), x.data())?);
        }
    }
    Ok(report)
}

/// Per-point anomaly scores: squared reconstruction error averaged over
/// channels, keyed by series row.
pub fn point_scores(model: &TimesNet, samples: &[WindowSample]) -> Result<Vec<(usize, f64)>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let x = stack_inputs(samples)?;
    let pred = model.reconstruct(&x)?;
    let (t, c) = (x.dims()[1], x.dims()[2]);
    let mut out = Vec::with_capacity(samples.len() * t);
    for (b, s) in samples.iter().enumerate() {
        for i in 0..t {
            let row = (b * t + i) * c;
            let err: f64 = (0..c)
                .map(|ch| (pred.data()[row + ch] - x.data()[row + ch]).powi(2))
                .sum();
            out.push((s.offset + i, err / c as f64));
        }
    }
    Ok(out)
}

/// Keeps windows in offset order, dropping any that overlap one already kept.
pub fn non_overlapping(samples: &[WindowSample]) -> Vec<WindowSample> {
    let mut sorted: Vec<&WindowSample> = samples.iter().collect();
    sorted.sort_by_key(|s| s.offset);
    let mut next = 0;
    let mut out = Vec::new();
    for s in sorted {
        if s.offset >= next {
            next = s.offset + s.input.dims()[0];
            out.push(s.clone());
        }
    }
    out
}

/// Flags the test points whose score exceeds the `(1 - ratio)` quantile of
/// the reference scores. `labels` is indexed by series row.
pub fn anomaly_report(
    model: &TimesNet,
    reference: &[WindowSample],
    test: &[WindowSample],
    labels: &[bool],
    ratio: f64,
) -> Result<EvalReport> {
    if reference.is_empty() || test.is_empty() {
        return Err(empty("anomaly scoring"));
    }
    let reference: Vec<f64> = point_scores(model, &non_overlapping(reference))?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    let scored = point_scores(model, &non_overlapping(test))?;
    let mut point_labels = Vec::with_capacity(scored.len());
    for &(row, _) in &scored {
        point_labels.push(
            *labels
                .get(row)
                .ok_or_else(|| Error::InvalidArgument(format!("no label for series row {row}")))?,
        );
    }
    let scores: Vec<f64> = scored.iter().map(|&(_, s)| s).collect();
    let mut report = anomaly_eval(&scores, &point_labels, ratio, Some(&reference))?;
    report.channels = model.config().channels;
    Ok(report)
}

/// A synthetic task: data, model and optimizer settings.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub name: &'static str,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_set: Vec<WindowSample>,
    pub val_set: Vec<WindowSample>,
    pub test_set: Vec<WindowSample>,
    /// Per-row anomaly labels of the whole series (reconstruction only).
    pub labels: Option<Vec<bool>>,
    pub anomaly_ratio: f64,
}

#[derive(Debug)]
pub struct BenchmarkOutcome {
    pub report: TrainReport,
    pub eval: EvalReport,
    pub model: TimesNet,
}

/// Partitions windows into train, validation and test, keeping their order.
pub fn by_split(windows: Vec<WindowSample>) -> [Vec<WindowSample>; 3] {
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for w in windows {
        let i = match w.split {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        };
        out[i].push(w);
    }
    out
}

fn small_model(
    seq_len: usize,
    channels: usize,
    head: Head,
    k: usize,
    layers: usize,
) -> ModelConfig {
    let mut m = ModelConfig::new(seq_len, channels, head);
    m.d_min = 16;
    m.d_max = 16;
    m.k = k;
    m.layers = layers;
    m
}

impl Benchmark {
    /// Noiseless period-24 sine, 96 steps in, 24 out, long-horizon defaults.
    pub fn forecast_sine(seed: u64) -> Result<Self> {
        let comps = [Component {
            period: 24.0,
            amplitude: 1.0,
            phase: 0.0,
        }];
        let series = synth_multiperiodic(1500, 1, &comps, 0.0, 0.0, seed)?;
        let splits = SplitFractions::new(0.7, 0.1, 0.2)?;
        let windows = make_windows(
            &series,
            WindowTask::Forecast { horizon: 24 },
            96,
            &splits,
            1,
        )?;
        let [train_set, val_set, test_set] = by_split(windows);
        let defaults = Task::Forecast.defaults();
        let mut model = small_model(
            96,
            1,
            Head::Forecast { horizon: 24 },
            defaults.k,
            defaults.layers,
        );
        model.seed = seed;
        let mut train = TrainConfig::for_task(Task::Forecast);
        train.seed = seed;
        Ok(Benchmark {
            name: "forecast-sine",
            model,
            train,
            train_set,
            val_set,
            test_set,
            labels: None,
            anomaly_ratio: 0.0,
        })
    }

    /// Noiseless two-tone signal with `ratio` of the points hidden. Training
    /// draws a fresh mask every epoch; test masks are fixed here and
    /// validation masks by the trainer.
    pub fn imputation_two_tone(seed: u64, ratio: f64, aggregation: Aggregation) -> Result<Self> {
        let comps = [
            Component {
                period: 24.0,
                amplitude: 1.0,
                phase: 0.0,
            },
            Component {
                period: 8.0,
                amplitude: 0.5,
                phase: 0.0,
            },
        ];
        let series = synth_multiperiodic(1000, 1, &comps, 0.0, 0.0, seed)?;
        let splits = SplitFractions::new(0.7, 0.1, 0.2)?;
        let windows = make_windows(&series, WindowTask::Imputation, 96, &splits, 2)?;
        let [train_set, val_set, test_set] = by_split(windows);
        let fix = |set: Vec<WindowSample>, salt: u64| -> Result<Vec<WindowSample>> {
            set.iter()
                .enumerate()
                .map(|(i, s)| random_mask(s, ratio, seed ^ salt ^ i as u64))
                .collect()
        };
        let test_set = fix(test_set, 0x7e5)?;
        let defaults = Task::Imputation.defaults();
        let mut model = small_model(96, 1, Head::Imputation, defaults.k, defaults.layers);
        model.seed = seed;
        model.aggregation = aggregation;
        let mut train = TrainConfig::for_task(Task::Imputation);
        train.seed = seed;
        train.mask_ratio = Some(ratio);
        Ok(Benchmark {
            name: "imputation-two-tone",
            model,
            train,
            train_set,
            val_set,
            test_set,
            labels: None,
            anomaly_ratio: 0.0,
        })
    }

    /// Noisy sinusoids of period 24 (class 0) or 12 (class 1) with random
    /// phase and amplitude; 200 training and 100 test windows.
    pub fn classification_periods(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.1).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut make = |n: usize, split: Split| -> Result<Vec<WindowSample>> {
            (0..n)
                .map(|i| {
                    let label = i % 2;
                    let period = [24.0, 12.0][label];
                    let phase = rng.random_range(0.0..2.0 * PI);
                    let amp = rng.random_range(0.5..1.5);
                    let v: Vec<f64> = (0..96)
                        .map(|t| {
                            amp * (2.0 * PI * t as f64 / period + phase).sin()
                                + noise.sample(&mut rng)
                        })
                        .collect();
                    Ok(WindowSample {
                        input: Tensor::new(&[96, 1], v)?,
                        target: Target::Class(label),
                        split,
                        offset: 0,
                    })
                })
                .collect()
        };
        let train_set = make(200, Split::Train)?;
        let val_set = make(50, Split::Val)?;
        let test_set = make(100, Split::Test)?;
        let defaults = Task::Classification.defaults();
        let mut model = small_model(
            96,
            1,
            Head::Classification { classes: 2 },
            defaults.k,
            defaults.layers,
        );
        model.seed = seed;
        let mut train = TrainConfig::for_task(Task::Classification);
        train.seed = seed;
        Ok(Benchmark {
            name: "classification-periods",
            model,
            train,
            train_set,
            val_set,
            test_set,
            labels: None,
            anomaly_ratio: 0.0,
        })
    }

    /// Two-channel periodic series with 8-sigma spikes at 1% of the rows,
    /// spread over every split.
    pub fn anomaly_spikes(seed: u64) -> Result<Self> {
        let comps = [
            Component {
                period: 24.0,
                amplitude: 1.0,
                phase: 0.0,
            },
            Component {
                period: 8.0,
                amplitude: 0.5,
                phase: 0.7,
            },
        ];
        let len = 6000;
        let base = synth_multiperiodic(len, 2, &comps, 0.0, 0.05, seed)?;
        let (series, labels) = inject_anomalies(&base, len / 100, 8.0, seed ^ 0x5b1)?;
        let splits = SplitFractions::new(0.5, 0.1, 0.4)?;
        let windows = make_windows(&series, WindowTask::Reconstruction, 96, &splits, 8)?;
        let [train_set, val_set, test_set] = by_split(windows);
        let defaults = Task::Anomaly.defaults();
        let mut model = small_model(96, 2, Head::Reconstruction, defaults.k, defaults.layers);
        model.seed = seed;
        let mut train = TrainConfig::for_task(Task::Anomaly);
        train.seed = seed;
        Ok(Benchmark {
            name: "anomaly-spikes",
            model,
            train,
            train_set,
            val_set: non_overlapping(&val_set),
            test_set: non_overlapping(&test_set),
            labels: Some(labels),
            anomaly_ratio: 0.01,
        })
    }

    pub fn run(&self) -> Result<BenchmarkOutcome> {
        let mut model = TimesNet::new(self.model.clone())?;
        let report = train(&mut model, &self.train_set, &self.val_set, &self.train)?;
        let eval = match &self.labels {
            Some(labels) => anomaly_report(
                &model,
                &self.train_set,
                &self.test_set,
                labels,
                self.anomaly_ratio,
            )?,
            None => evaluate(&model, &self.test_set)?,
        };
        Ok(BenchmarkOutcome {
            report,
            eval,
            model,
        })
    }
}
