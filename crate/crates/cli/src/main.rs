//! `times2d`: period analysis, training, evaluation and inference from CSV files.

mod commands;
mod config;
mod dataset;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};
use times2d::config::Task;
use times2d::data::Split;

use crate::config::{read_config_file, RunConfig};

#[derive(Parser)]
#[command(
    name = "times2d",
    version,
    about = "Multi-period 2D temporal modeling for time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Top-k period density over sliding windows of a series.
    AnalyzePeriods {
        #[command(flatten)]
        run: RunArgs,
        /// Window step; defaults to the window length.
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Train a model and write its checkpoint, loss trace and report.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        stride: Option<usize>,
        /// Train once per value, e.g. `k=1,2,3,5`.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Score a trained model on one split of a data file.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "val", value_parser = parse_split)]
        split: Split,
    },
    /// Run a trained model over a data file and write its predictions.
    Infer {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// 0/1 observation mask shaped like the data (imputation).
        #[arg(long)]
        mask: Option<PathBuf>,
    },
}

/// Flags shared by every command. Each one overrides the same key in
/// `--config`, which in turn overrides the task defaults.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    pred_len: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    d_min: Option<usize>,
    #[arg(long)]
    d_max: Option<usize>,
    #[arg(long)]
    mask_ratio: Option<f64>,
    #[arg(long)]
    anomaly_ratio: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// The first CSV column holds timestamps.
    #[arg(long)]
    timestamp_column: bool,
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" | "validation" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split `{s}` (train, val or test)")),
    }
}

impl RunArgs {
    /// Config-file keys overlaid by the flags that were given.
    fn overrides(&self, stride: Option<usize>) -> Result<Map<String, Value>> {
        let mut m = match &self.config {
            Some(path) => read_config_file(path)?,
            None => Map::new(),
        };
        let mut set = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.to_owned(), v);
            }
        };
        set("task", self.task.map(|t| json!(t)));
        set("data", self.data.as_ref().map(|p| json!(p)));
        set("out", self.out.as_ref().map(|p| json!(p)));
        set("seq_len", self.seq_len.map(Value::from));
        set("pred_len", self.pred_len.map(Value::from));
        set("k", self.k.map(Value::from));
        set("layers", self.layers.map(Value::from));
        set("d_min", self.d_min.map(Value::from));
        set("d_max", self.d_max.map(Value::from));
        set("mask_ratio", self.mask_ratio.map(Value::from));
        set("anomaly_ratio", self.anomaly_ratio.map(Value::from));
        set("learning_rate", self.learning_rate.map(Value::from));
        set("batch_size", self.batch_size.map(Value::from));
        set("epochs", self.epochs.map(Value::from));
        set("seed", self.seed.map(Value::from));
        set("stride", stride.map(Value::from));
        set(
            "timestamp_column",
            self.timestamp_column.then_some(Value::Bool(true)),
        );
        Ok(m)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::AnalyzePeriods { run, stride } => {
            // the model task is irrelevant here; forecast defaults fill the rest
            let cfg = RunConfig::resolve(&run.overrides(None)?, Some(Task::Forecast))?;
            commands::analyze_periods(&cfg, run.k.unwrap_or(6), stride.unwrap_or(cfg.seq_len))
        }
        Command::Train { run, stride, sweep } => {
            commands::train_cmd(&run.overrides(stride)?, None, sweep.as_deref())
        }
        Command::Eval {
            run,
            checkpoint,
            split,
        } => commands::eval_cmd(&run.overrides(None)?, checkpoint.as_deref(), split),
        Command::Infer {
            run,
            checkpoint,
            mask,
        } => commands::infer_cmd(
            &run.overrides(None)?,
            checkpoint.as_deref(),
            mask.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
