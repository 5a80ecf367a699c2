//! Scale-free forecast errors used for short-horizon benchmarks.

use super::check_pair;
use crate::error::{Error, Result};

/// Symmetric absolute percentage error in percent, in `[0, 200]`.
/// Terms with `|y| + |y_hat| < 1e-8` count as zero.
pub fn smape(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let den = p.abs() + y.abs();
            if den < 1e-8 {
                0.0
            } else {
                (y - p).abs() / den
            }
        })
        .sum();
    Ok(200.0 * total / pred.len() as f64)
}

/// Mean absolute percentage error in percent. Undefined for zero targets.
pub fn mape(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    if target.contains(&0.0) {
        return Err(Error::InvalidArgument("MAPE with a zero target".into()));
    }
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, y)| (y - p).abs() / y.abs())
        .sum();
    Ok(100.0 * total / pred.len() as f64)
}

/// Mean absolute error scaled by the in-sample mean absolute lag-`m`
/// difference, `(1/(n-m)) sum_{j>m} |x_j - x_{j-m}|`.
pub fn mase(pred: &[f64], target: &[f64], insample: &[f64], m: usize) -> Result<f64> {
    check_pair(pred, target)?;
    if m == 0 || insample.len() <= m {
        return Err(Error::InvalidArgument(format!(
            "MASE needs an in-sample series longer than m = {m}, got {}",
            insample.len()
        )));
    }
    let n = insample.len();
    let scale = (m..n)
        .map(|j| (insample[j] - insample[j - m]).abs())
        .sum::<f64>()
        / (n - m) as f64;
    if scale == 0.0 {
        return Err(Error::DegenerateScale);
    }
    let mae = pred
        .iter()
        .zip(target)
        .map(|(p, y)| (y - p).abs())
        .sum::<f64>()
        / pred.len() as f64;
    Ok(mae / scale)
}

/// Repeats the last `m` in-sample values over `horizon` steps (`m = 1` is
/// the naive last-value forecast). Serves as the reference forecast for
/// [`owa`].
pub fn seasonal_naive(insample: &[f64], m: usize, horizon: usize) -> Result<Vec<f64>> {
    if m == 0 || insample.len() < m {
        return Err(Error::InvalidArgument(format!(
            "seasonal naive needs at least m = {m} in-sample points"
        )));
    }
    let season = &insample[insample.len() - m..];
    Ok((0..horizon).map(|i| season[i % m]).collect())
}

/// Average of SMAPE and MASE, each relative to the seasonal-naive reference.
pub fn owa(pred: &[f64], target: &[f64], insample: &[f64], m: usize) -> Result<f64> {
    let reference = seasonal_naive(insample, m, target.len())?;
    let smape_ref = smape(&reference, target)?;
    let mase_ref = mase(&reference, target, insample, m)?;
    if smape_ref == 0.0 || mase_ref == 0.0 {
        return Err(Error::InvalidArgument(
            "OWA undefined: the reference forecast is exact".into(),
        ));
    }
    let s = smape(pred, target)?;
    let q = mase(pred, target, insample, m)?;
    Ok(0.5 * (s / smape_ref + q / mase_ref))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smape_hand_value() {
        let v = smape(&[110.0], &[100.0]).unwrap();
        assert!((v - 9.523_809_523_809_524).abs() < 1e-12);
        assert_eq!(smape(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(smape(&[0.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(smape(&[1.0], &[-1.0]).unwrap(), 200.0);
    }

    #[test]
    fn mape_value() {
        assert!((mape(&[110.0], &[100.0]).unwrap() - 10.0).abs() < 1e-12);
        assert!(mape(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn mase_hand_value() {
        let v = mase(&[4.0], &[5.0], &[1.0, 2.0, 3.0, 4.0], 1).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert_eq!(mase(&[5.0], &[5.0], &[1.0, 2.0, 3.0, 4.0], 1).unwrap(), 0.0);
        assert!(matches!(
            mase(&[1.0], &[2.0], &[3.0, 3.0, 3.0], 1),
            Err(Error::DegenerateScale)
        ));
        assert!(mase(&[1.0], &[2.0], &[3.0, 3.0], 2).is_err());
    }

    #[test]
    fn seasonal_naive_repeats_last_season() {
        let f = seasonal_naive(&[1., 2., 3., 4., 5.], 2, 5).unwrap();
        assert_eq!(f, vec![4., 5., 4., 5., 4.]);
    }

    #[test]
    fn owa_references() {
        let insample = [1.0, 3.0, 2.0, 5.0, 4.0, 6.0];
        let target = [7.0, 5.0, 8.0];
        assert_eq!(owa(&target, &target, &insample, 2).unwrap(), 0.0);
        let naive = seasonal_naive(&insample, 2, 3).unwrap();
        assert!((owa(&naive, &target, &insample, 2).unwrap() - 1.0).abs() < 1e-15);
    }
}
