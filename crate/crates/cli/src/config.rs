//! Run configuration: task defaults, overlaid by a JSON file, overlaid by flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use times2d::config::Task;
use times2d::data::SplitFractions;
use times2d::model::{Head, ModelConfig};
use times2d::timesblock::Aggregation;
use times2d::training::{LossKind, TrainConfig};

/// Everything a run needs, with flat keys so a config file reads like the
/// command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub data: Option<PathBuf>,
    /// The first CSV column holds timestamps rather than values.
    pub timestamp_column: bool,
    pub seq_len: usize,
    pub pred_len: usize,
    pub k: usize,
    pub layers: usize,
    pub d_min: usize,
    pub d_max: usize,
    pub branches: usize,
    pub aggregation: Aggregation,
    pub mask_ratio: f64,
    pub anomaly_ratio: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Step between training windows.
    pub stride: usize,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn for_task(task: Task) -> Self {
        let d = task.defaults();
        RunConfig {
            task,
            data: None,
            timestamp_column: false,
            seq_len: 96,
            pred_len: if task == Task::ShortForecast { 12 } else { 24 },
            k: d.k,
            layers: d.layers,
            d_min: d.d_min,
            d_max: d.d_max,
            branches: 3,
            aggregation: Aggregation::Softmax,
            mask_ratio: 0.25,
            anomaly_ratio: 0.01,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            epochs: d.epochs,
            patience: 3,
            loss: d.loss,
            seed: 0,
            train_fraction: 0.7,
            val_fraction: 0.1,
            test_fraction: 0.2,
            stride: 1,
            out: PathBuf::from("out"),
        }
    }

    /// Defaults for the task named by `overrides` (or `fallback_task`),
    /// then every key in `overrides`, validated against the known fields.
    pub fn resolve(overrides: &Map<String, Value>, fallback_task: Option<Task>) -> Result<Self> {
        let task = match overrides.get("task") {
            Some(v) => serde_json::from_value(v.clone()).context("invalid `task`")?,
            None => {
                fallback_task.context("no task given: pass --task or set `task` in the config")?
            }
        };
        let Value::Object(mut merged) = serde_json::to_value(RunConfig::for_task(task))? else {
            unreachable!("RunConfig serializes to an object")
        };
        for (k, v) in overrides {
            merged.insert(k.clone(), v.clone());
        }
        let cfg: RunConfig =
            serde_json::from_value(Value::Object(merged)).context("invalid configuration")?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.seq_len < 2 {
            bail!("seq_len must be at least 2");
        }
        if self.stride == 0 {
            bail!("stride must be positive");
        }
        if !(0.0..1.0).contains(&self.anomaly_ratio) {
            bail!("anomaly_ratio {} outside [0, 1)", self.anomaly_ratio);
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            bail!("mask_ratio {} outside (0, 1)", self.mask_ratio);
        }
        self.splits()?;
        Ok(())
    }

    pub fn splits(&self) -> Result<SplitFractions> {
        Ok(SplitFractions::new(
            self.train_fraction,
            self.val_fraction,
            self.test_fraction,
        )?)
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .context("no data file: pass --data or set `data` in the config")
    }

    pub fn head(&self, classes: usize) -> Head {
        match self.task {
            Task::Forecast | Task::ShortForecast => Head::Forecast {
                horizon: self.pred_len,
            },
            Task::Imputation => Head::Imputation,
            Task::Classification => Head::Classification { classes },
            Task::Anomaly => Head::Reconstruction,
        }
    }

    pub fn model_config(&self, channels: usize, classes: usize) -> ModelConfig {
        let mut m = ModelConfig::new(self.seq_len, channels, self.head(classes));
        m.k = self.k;
        m.layers = self.layers;
        m.d_min = self.d_min;
        m.d_max = self.d_max;
        m.branches = self.branches;
        m.aggregation = self.aggregation;
        m.seed = self.seed;
        m
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = TrainConfig::for_task(self.task);
        t.learning_rate = self.learning_rate;
        t.batch_size = self.batch_size;
        t.epochs = self.epochs;
        t.patience = self.patience;
        t.loss = self.loss;
        t.seed = self.seed;
        t.mask_ratio = (self.task == Task::Imputation).then_some(self.mask_ratio);
        t
    }
}

/// Reads a JSON object of config keys.
pub fn read_config_file(path: &Path) -> Result<Map<String, Value>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))? {
        Value::Object(map) => Ok(map),
        _ => bail!("{} must hold a JSON object", path.display()),
    }
}

/// `key=v1,v2,...`, each value parsed as JSON (falling back to a string).
pub fn parse_sweep(spec: &str) -> Result<(String, Vec<Value>)> {
    let (key, values) = spec
        .split_once('=')
        .with_context(|| format!("sweep `{spec}` is not of the form key=v1,v2"))?;
    let key = key.trim().replace('-', "_");
    let values: Vec<Value> = values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_owned())))
        .collect();
    if values.is_empty() {
        bail!("sweep `{spec}` lists no values");
    }
    Ok((key, values))
}
