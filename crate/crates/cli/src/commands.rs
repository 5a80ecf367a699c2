//! The four subcommands. Every output file embeds the effective config.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Map, Value};
use times2d::config::Task;
use times2d::data::{load_mask_csv, write_csv, Split, WindowSample};
use times2d::experiment::{anomaly_report, evaluate, non_overlapping, point_scores};
use times2d::metrics::{quantile, EvalReport};
use times2d::model::TimesNet;
use times2d::spectral::discover_periods;
use times2d::tensor::Tensor;
use times2d::training::{evaluate_loss, train, validation_set, Checkpoint, TrainReport};
use times2d::Error;

use crate::config::{parse_sweep, RunConfig};
use crate::dataset::{tiling, Dataset, Windows};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Entries whose amplitude is below this fraction of the window's largest
/// selected amplitude carry no periodic content and are left out of the
/// density.
const NEGLIGIBLE_AMPLITUDE: f64 = 1e-8;

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    Ok(&cfg.out)
}

/// Sliding top-k period analysis: a `period,density` CSV over all windows
/// plus one JSON line per window.
pub fn analyze_periods(cfg: &RunConfig, k: usize, stride: usize) -> Result<()> {
    let data = Dataset::load(cfg)?;
    let (n, t) = (data.series.len(), cfg.seq_len);
    if n < t {
        bail!("series has {n} rows, fewer than the window length {t}");
    }
    if stride == 0 {
        bail!("stride must be positive");
    }
    let dir = out_dir(cfg)?;
    let mut lines = String::new();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for start in (0..=n - t).step_by(stride) {
        let p = discover_periods(&data.series.rows(start, start + t)?, k.min(t / 2).max(1))?;
        let top = p.amplitudes().iter().cloned().fold(0.0, f64::max);
        for e in &p.entries {
            if top > 0.0 && e.amplitude > NEGLIGIBLE_AMPLITUDE * top {
                *counts.entry(e.period).or_default() += 1;
            }
        }
        let line = json!({
            "offset": start,
            "frequencies": p.frequencies(),
            "periods": p.periods(),
            "amplitudes": p.amplitudes(),
        });
        lines.push_str(&line.to_string());
        lines.push('\n');
    }
    let total: usize = counts.values().sum();
    if total == 0 {
        bail!("no window has periodic content (every spectrum is flat zero)");
    }
    let mut w = csv::Writer::from_path(dir.join("periods.csv"))?;
    w.write_record(["period", "density"])?;
    for (period, c) in &counts {
        w.write_record([period.to_string(), (*c as f64 / total as f64).to_string()])?;
    }
    w.flush()?;
    fs::write(dir.join("windows.jsonl"), lines)?;
    write_json(
        &dir.join("analysis.json"),
        &json!({ "config": cfg, "top_k": k, "stride": stride }),
    )?;
    let mut peaks: Vec<(&usize, &usize)> = counts.iter().collect();
    peaks.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    for (period, c) in peaks.iter().take(k) {
        println!("period {period}: density {:.4}", **c as f64 / total as f64);
    }
    Ok(())
}

/// Threshold-free metrics plus the training loss on `samples`.
fn score(model: &TimesNet, cfg: &RunConfig, samples: &[WindowSample]) -> Result<EvalReport> {
    let samples = validation_set(samples, &cfg.train_config())?;
    let mut report = evaluate(model, &samples)?;
    report.insert("loss", evaluate_loss(model, &samples, cfg.loss)?);
    Ok(report)
}

fn anomaly_threshold(model: &TimesNet, cfg: &RunConfig, w: &Windows) -> Result<Option<f64>> {
    if cfg.task != Task::Anomaly {
        return Ok(None);
    }
    let scores: Vec<f64> = point_scores(model, &non_overlapping(&w.train))?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    Ok(Some(quantile(&scores, 1.0 - cfg.anomaly_ratio)?))
}

fn write_loss_csv(path: &Path, report: &TrainReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for r in &report.records {
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), val])?;
    }
    w.flush()?;
    Ok(())
}

/// Trains one model and writes its checkpoint, loss trace and report.
/// Returns the report on the validation split (training split if empty).
fn train_once(cfg: &RunConfig) -> Result<EvalReport> {
    let data = Dataset::load(cfg)?;
    let w = data.windows(cfg)?;
    let mut model = TimesNet::new(cfg.model_config(data.channels(), w.classes))?;
    let report = train(&mut model, &w.train, &w.val, &cfg.train_config())?;
    let split = if w.val.is_empty() {
        Split::Train
    } else {
        Split::Val
    };
    let mut eval = score(&model, cfg, w.split(split))?;
    let threshold = anomaly_threshold(&model, cfg, &w)?;
    eval.threshold = threshold;
    let dir = out_dir(cfg)?;
    let run = json!({ "config": cfg, "anomaly_threshold": threshold });
    Checkpoint::from_model(&model, run)?.save(&dir.join(CHECKPOINT_FILE))?;
    write_loss_csv(&dir.join("loss.csv"), &report)?;
    write_json(
        &dir.join("report.json"),
        &json!({
            "config": cfg,
            "parameters": model.num_params(),
            "d_model": model.d_model(),
            "train": report,
            "split": split,
            "eval": eval,
        }),
    )?;
    Ok(eval)
}

pub fn train_cmd(
    overrides: &Map<String, Value>,
    fallback: Option<Task>,
    sweep: Option<&str>,
) -> Result<()> {
    let Some(spec) = sweep else {
        let cfg = RunConfig::resolve(overrides, fallback)?;
        let eval = train_once(&cfg)?;
        print_metrics("", &eval);
        return Ok(());
    };
    let (key, values) = parse_sweep(spec)?;
    let base = RunConfig::resolve(overrides, fallback)?;
    let mut rows = Vec::new();
    for v in values {
        let label = match &v {
            Value::String(s) => s.clone(),
            v => v.to_string(),
        };
        let mut o = overrides.clone();
        o.insert(key.clone(), v);
        o.insert("out".into(), json!(base.out.join(format!("{key}={label}"))));
        let cfg = RunConfig::resolve(&o, fallback)
            .with_context(|| format!("sweep value {key}={label}"))?;
        let eval = train_once(&cfg)?;
        print_metrics(&format!("{key}={label} "), &eval);
        rows.push((label, eval));
    }
    let dir = out_dir(&base)?;
    let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
    w.write_record([key.as_str(), "metric", "value"])?;
    for (label, eval) in &rows {
        for (m, v) in &eval.metrics {
            w.write_record([label.clone(), m.clone(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn print_metrics(prefix: &str, eval: &EvalReport) {
    let parts: Vec<String> = eval
        .metrics
        .iter()
        .map(|(k, v)| format!("{k}={v:.6}"))
        .collect();
    println!("{prefix}{}", parts.join(" "));
}

/// Loads a checkpoint and the run config stored in it, overlaid by `overrides`.
fn restore(
    overrides: &Map<String, Value>,
    checkpoint: Option<&Path>,
) -> Result<(TimesNet, RunConfig, Option<f64>)> {
    let path: PathBuf = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => match overrides.get("out").and_then(Value::as_str) {
            Some(out) => Path::new(out).join(CHECKPOINT_FILE),
            None => bail!("no checkpoint: pass --checkpoint or --out pointing at a training run"),
        },
    };
    let ckpt = Checkpoint::load(&path)
        .with_context(|| format!("reading checkpoint {}", path.display()))?;
    let mut base = match ckpt.run.get("config") {
        Some(Value::Object(m)) => m.clone(),
        _ => bail!("checkpoint {} carries no run config", path.display()),
    };
    let threshold = ckpt.run.get("anomaly_threshold").and_then(Value::as_f64);
    for (k, v) in overrides {
        base.insert(k.clone(), v.clone());
    }
    let model = ckpt
        .into_model()
        .with_context(|| format!("loading {}", path.display()))?;
    let cfg = RunConfig::resolve(&base, None)?;
    Ok((model, cfg, threshold))
}

fn check_channels(model: &TimesNet, data: &Dataset) -> Result<()> {
    let (expected, found) = (model.config().channels, data.channels());
    if expected != found {
        return Err(Error::ChannelMismatch { expected, found }.into());
    }
    Ok(())
}

pub fn eval_cmd(
    overrides: &Map<String, Value>,
    checkpoint: Option<&Path>,
    split: Split,
) -> Result<()> {
    let (model, cfg, threshold) = restore(overrides, checkpoint)?;
    let data = Dataset::load(&cfg)?;
    check_channels(&model, &data)?;
    let w = data.windows(&cfg)?;
    let samples = w.split(split);
    if samples.is_empty() {
        bail!("the {split:?} split has no windows");
    }
    let mut eval = score(&model, &cfg, samples)?;
    eval.threshold = threshold;
    if let (Task::Anomaly, Some(labels)) = (cfg.task, data.anomaly_flags()) {
        let a = anomaly_report(&model, &w.train, samples, &labels, cfg.anomaly_ratio)?;
        eval.metrics.extend(a.metrics);
        eval.notes.extend(a.notes);
        eval.threshold = a.threshold;
    }
    let dir = out_dir(&cfg)?;
    write_json(
        &dir.join("eval.json"),
        &json!({ "config": cfg, "split": split, "eval": eval }),
    )?;
    print_metrics("", &eval);
    Ok(())
}

pub fn infer_cmd(
    overrides: &Map<String, Value>,
    checkpoint: Option<&Path>,
    mask: Option<&Path>,
) -> Result<()> {
    let (model, cfg, threshold) = restore(overrides, checkpoint)?;
    let data = Dataset::load(&cfg)?;
    check_channels(&model, &data)?;
    let (n, t) = (data.series.len(), cfg.seq_len);
    if n < t {
        bail!("series has {n} rows, fewer than the window length {t}");
    }
    let dir = out_dir(&cfg)?.to_path_buf();
    let out = dir.join("predictions.csv");
    let names = data.series.channel_names.clone();
    let starts = tiling(n, t);
    let windows = |starts: &[usize]| -> Result<Tensor> {
        let rows: Vec<Tensor> = starts
            .iter()
            .map(|&s| data.series.rows(s, s + t))
            .collect::<Result<_, _>>()?;
        Ok(Tensor::stack(&rows)?)
    };
    let rows_written = match cfg.task {
        Task::Forecast | Task::ShortForecast => {
            let y = model.forecast(&windows(&[n - t])?)?;
            let h = y.dims()[1];
            write_csv(&out, &names, &y.reshape(&[h, names.len()])?)?;
            h
        }
        Task::Imputation => {
            let path = mask.context("imputation inference needs --mask")?;
            let m = load_mask_csv(path, cfg.timestamp_column)?;
            if m.dims() != data.series.values.dims() {
                bail!(
                    "mask shape {:?} does not match data shape {:?}",
                    m.dims(),
                    data.series.values.dims()
                );
            }
            let c = names.len();
            let masks: Vec<Tensor> = starts
                .iter()
                .map(|&s| Tensor::new(&[t, c], m.data()[s * c..(s + t) * c].to_vec()))
                .collect::<Result<_, _>>()?;
            let y = model.impute(&windows(&starts)?, &Tensor::stack(&masks)?)?;
            let mut filled = data.series.values.clone();
            for (b, &s) in starts.iter().enumerate() {
                filled.data_mut()[s * c..(s + t) * c]
                    .copy_from_slice(&y.data()[b * t * c..(b + 1) * t * c]);
            }
            write_csv(&out, &names, &filled)?;
            n
        }
        Task::Classification => {
            let starts: Vec<usize> = (0..n / t).map(|b| b * t).collect();
            let logits = model.classify(&windows(&starts)?)?;
            let classes = logits.dims()[1];
            let mut w = csv::Writer::from_path(&out)?;
            let mut header = vec!["offset".to_string(), "class".to_string()];
            header.extend((0..classes).map(|c| format!("logit_{c}")));
            w.write_record(&header)?;
            for (s, row) in starts.iter().zip(logits.data().chunks(classes)) {
                let class = times2d::metrics::argmax(row).unwrap_or(0);
                let mut rec = vec![s.to_string(), class.to_string()];
                rec.extend(row.iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
            w.flush()?;
            starts.len()
        }
        Task::Anomaly => {
            let threshold = threshold.context("checkpoint carries no anomaly threshold")?;
            let samples: Vec<WindowSample> = starts
                .iter()
                .map(|&s| {
                    Ok(WindowSample {
                        input: data.series.rows(s, s + t)?,
                        target: times2d::data::Target::Reconstruction,
                        split: Split::Test,
                        offset: s,
                    })
                })
                .collect::<Result<_>>()?;
            let mut scores = vec![0.0; n];
            for (row, s) in point_scores(&model, &samples)? {
                scores[row] = s;
            }
            let mut w = csv::Writer::from_path(&out)?;
            w.write_record(["row", "score", "anomaly"])?;
            for (i, s) in scores.iter().enumerate() {
                w.write_record([
                    i.to_string(),
                    s.to_string(),
                    u8::from(*s > threshold).to_string(),
                ])?;
            }
            w.flush()?;
            n
        }
    };
    write_json(
        &dir.join("infer.json"),
        &json!({ "config": cfg, "predictions": out, "rows": rows_written, "anomaly_threshold": threshold }),
    )?;
    let mut stdout = std::io::stdout();
    writeln!(stdout, "wrote {rows_written} rows to {}", out.display())?;
    Ok(())
}
