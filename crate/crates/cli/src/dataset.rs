//! Turning a CSV file into the windows a task trains and evaluates on.

use anyhow::{bail, Context, Result};
use times2d::config::Task;
use times2d::data::{
    load_csv, make_windows, split_bounds, RawSeries, Split, Target, WindowSample, WindowTask,
};
use times2d::experiment::by_split;
use times2d::tensor::Tensor;

use crate::config::RunConfig;

/// Name of the optional CSV column carrying class ids (classification) or
/// 0/1 anomaly flags (anomaly detection). It is never fed to the model.
pub const LABEL_COLUMN: &str = "label";

pub struct Dataset {
    pub series: RawSeries,
    pub labels: Option<Vec<f64>>,
}

pub struct Windows {
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
    pub classes: usize,
}

impl Windows {
    pub fn split(&self, split: Split) -> &[WindowSample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

impl Dataset {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let path = cfg.data_path()?;
        let raw = load_csv(path, cfg.timestamp_column)
            .with_context(|| format!("reading {}", path.display()))?;
        let Some(li) = raw
            .channel_names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(LABEL_COLUMN))
        else {
            return Ok(Dataset {
                series: raw,
                labels: None,
            });
        };
        let c = raw.channels();
        if c == 1 {
            bail!("{} has only a label column", path.display());
        }
        let labels = raw.channel(li);
        let keep: Vec<usize> = (0..c).filter(|&i| i != li).collect();
        let values: Vec<f64> = raw
            .values
            .data()
            .chunks(c)
            .flat_map(|row| keep.iter().map(move |&i| row[i]))
            .collect();
        let mut series = RawSeries::new(
            Tensor::new(&[raw.len(), c - 1], values)?,
            keep.iter().map(|&i| raw.channel_names[i].clone()).collect(),
        )?;
        series.timestamps = raw.timestamps;
        Ok(Dataset {
            series,
            labels: Some(labels),
        })
    }

    pub fn channels(&self) -> usize {
        self.series.channels()
    }

    /// Per-row anomaly flags, when a label column is present.
    pub fn anomaly_flags(&self) -> Option<Vec<bool>> {
        self.labels
            .as_ref()
            .map(|l| l.iter().map(|&v| v != 0.0).collect())
    }

    pub fn windows(&self, cfg: &RunConfig) -> Result<Windows> {
        if cfg.task == Task::Classification {
            return self.class_blocks(cfg);
        }
        let task = match cfg.task {
            Task::Forecast | Task::ShortForecast => WindowTask::Forecast {
                horizon: cfg.pred_len,
            },
            Task::Imputation => WindowTask::Imputation,
            Task::Anomaly => WindowTask::Reconstruction,
            Task::Classification => unreachable!(),
        };
        let all = make_windows(&self.series, task, cfg.seq_len, &cfg.splits()?, cfg.stride)?;
        let [train, val, test] = by_split(all);
        Ok(Windows {
            train,
            val,
            test,
            classes: 0,
        })
    }

    /// Consecutive non-overlapping blocks of `seq_len` rows, each labelled by
    /// its (constant) label column, assigned to splits in file order.
    fn class_blocks(&self, cfg: &RunConfig) -> Result<Windows> {
        let labels = self
            .labels
            .as_ref()
            .with_context(|| format!("classification data needs a `{LABEL_COLUMN}` column"))?;
        let t = cfg.seq_len;
        let blocks = self.series.len() / t;
        if blocks == 0 {
            bail!(
                "series of {} rows is shorter than one window of {t}",
                self.series.len()
            );
        }
        let mut samples = Vec::with_capacity(blocks);
        let mut classes = 0;
        for b in 0..blocks {
            let rows = &labels[b * t..(b + 1) * t];
            let first = rows[0];
            if rows.iter().any(|&v| v != first) {
                bail!(
                    "rows {}..{} mix labels; each block of {t} rows needs one label",
                    b * t + 1,
                    (b + 1) * t
                );
            }
            if first < 0.0 || first.fract() != 0.0 {
                bail!(
                    "label {first} in rows {}..{} is not a class index",
                    b * t + 1,
                    (b + 1) * t
                );
            }
            let label = first as usize;
            classes = classes.max(label + 1);
            samples.push((b, label));
        }
        let mut w = Windows {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            classes,
        };
        for (split, lo, hi) in split_bounds(blocks, &cfg.splits()?) {
            for &(b, label) in &samples[lo..hi] {
                let sample = WindowSample {
                    input: self.series.rows(b * t, (b + 1) * t)?,
                    target: Target::Class(label),
                    split,
                    offset: b * t,
                };
                match split {
                    Split::Train => w.train.push(sample),
                    Split::Val => w.val.push(sample),
                    Split::Test => w.test.push(sample),
                }
            }
        }
        Ok(w)
    }
}

/// Starts of `len`-row blocks tiling `0..total`; the last block is aligned
/// to the end of the series and may overlap its predecessor.
pub fn tiling(total: usize, len: usize) -> Vec<usize> {
    if total < len {
        return Vec::new();
    }
    let mut starts: Vec<usize> = (0..=total - len).step_by(len).collect();
    if starts.last() != Some(&(total - len)) {
        starts.push(total - len);
    }
    starts
}
