use serde::{Deserialize, Serialize};

use super::EvalReport;
use crate::error::{Error, Result};

/// Linearly interpolated quantile, `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("quantile of an empty set".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "quantile {q} outside [0, 1]"
        )));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_predictions(pred: &[bool], labels: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&p, &y) in pred.iter().zip(labels) {
            match (p, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }
}

/// Point-wise precision, recall and F1; empty denominators give 0.
pub fn precision_recall_f1(pred: &[bool], labels: &[bool]) -> Result<(f64, f64, f64)> {
    if pred.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "precision_recall_f1",
            left: vec![pred.len()],
            right: vec![labels.len()],
        });
    }
    let c = Confusion::from_predictions(pred, labels);
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    let f1 = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    Ok((p, r, f1))
}

/// Flags points whose score exceeds the `(1 - ratio)` quantile of
/// `reference` (or of `scores` when no reference is given) and reports
/// point-wise precision, recall and F1 without point adjustment.
pub fn anomaly_eval(
    scores: &[f64],
    labels: &[bool],
    ratio: f64,
    reference: Option<&[f64]>,
) -> Result<EvalReport> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument(
            "anomaly evaluation over zero scores".into(),
        ));
    }
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "anomaly_eval",
            left: vec![scores.len()],
            right: vec![labels.len()],
        });
    }
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!(
            "anomaly ratio {ratio} outside [0, 1)"
        )));
    }
    let threshold = quantile(reference.unwrap_or(scores), 1.0 - ratio)?;
    let pred: Vec<bool> = scores.iter().map(|&s| s > threshold).collect();
    let (p, r, f1) = precision_recall_f1(&pred, labels)?;
    let c = Confusion::from_predictions(&pred, labels);
    let mut report = EvalReport::new(scores.len(), 1);
    report
        .insert("precision", p)
        .insert("recall", r)
        .insert("f1", f1)
        .insert("flagged", (c.tp + c.fp) as f64)
        .insert("anomalies", (c.tp + c.fn_) as f64);
    report.threshold = Some(threshold);
    report
        .notes
        .push("point-wise F1 without point adjustment".into());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&v, 1.0).unwrap(), 4.0);
        assert_eq!(quantile(&v, 0.5).unwrap(), 2.5);
        assert!(quantile(&[], 0.5).is_err());
    }

    #[test]
    fn perfect_and_half_recall() {
        let y = [true, false, true, false];
        assert_eq!(precision_recall_f1(&y, &y).unwrap(), (1.0, 1.0, 1.0));
        let pred = [true, false, false, false];
        let (p, r, f1) = precision_recall_f1(&pred, &y).unwrap();
        assert_eq!((p, r), (1.0, 0.5));
        assert!((f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn nothing_flagged_scores_zero() {
        let (p, r, f1) = precision_recall_f1(&[false, false], &[true, false]).unwrap();
        assert_eq!((p, r, f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn threshold_from_scores() {
        let scores: Vec<f64> = (0..100).map(f64::from).collect();
        let labels: Vec<bool> = (0..100).map(|i| i >= 95).collect();
        let r = anomaly_eval(&scores, &labels, 0.05, None).unwrap();
        assert_eq!(r.get("f1"), Some(1.0));
        assert_eq!(r.get("flagged"), Some(5.0));
        assert!(anomaly_eval(&[], &[], 0.1, None).is_err());
        assert!(anomaly_eval(&[1.0], &[true, false], 0.1, None).is_err());
    }
}
