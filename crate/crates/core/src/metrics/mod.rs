//! Evaluation metrics and the serializable report that carries them.

mod anomaly;
mod cka;
mod forecast;

pub use anomaly::{anomaly_eval, precision_recall_f1, quantile, Confusion};
pub use cka::linear_cka;
pub use forecast::{mape, mase, owa, seasonal_naive, smape};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch {
            op: "metric",
            left: vec![pred.len()],
            right: vec![target.len()],
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("metric over zero elements".into()));
    }
    Ok(())
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / pred.len() as f64)
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

/// Fraction of rows whose argmax matches the label. Ties resolve to the
/// lowest class index.
pub fn accuracy(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "accuracy over {} predictions and {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let hits = logits
        .iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == Some(y))
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn argmax(row: &[f64]) -> Option<usize> {
    row.iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

/// Named metric values plus the context needed to interpret them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    pub samples: usize,
    pub channels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn new(samples: usize, channels: usize) -> Self {
        EvalReport {
            samples,
            channels,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, name: &str, value: f64) -> &mut Self {
        self.metrics.insert(name.to_owned(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn is_finite(&self) -> bool {
        self.metrics.values().all(|v| v.is_finite()) && self.threshold.is_none_or(f64::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_mae_values() {
        assert_eq!(mse(&[1., 2.], &[1., 2.]).unwrap(), 0.0);
        assert_eq!(mse(&[1., 2.], &[2., 2.]).unwrap(), 0.5);
        assert_eq!(mae(&[1., 2.], &[2., 2.]).unwrap(), 0.5);
        assert!(mse(&[1.], &[1., 2.]).is_err());
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn accuracy_and_ties() {
        let logits = vec![vec![0.0, 0.0], vec![0.1, 0.9], vec![2.0, 1.0]];
        assert_eq!(argmax(&logits[0]), Some(0));
        let acc = accuracy(&logits, &[0, 1, 1]).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn report_json_roundtrip() {
        let mut r = EvalReport::new(3, 1);
        r.insert("mse", 0.25).insert("mae", 0.5);
        r.threshold = Some(1.5);
        let s = serde_json::to_string(&r).unwrap();
        let back: EvalReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
        assert!(r.is_finite());
    }
}
