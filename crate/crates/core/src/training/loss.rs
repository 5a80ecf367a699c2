use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Mse,
    Smape,
    CrossEntropy,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "smape" => Ok(LossKind::Smape),
            "cross-entropy" | "ce" => Ok(LossKind::CrossEntropy),
            _ => Err(Error::InvalidArgument(format!("unknown loss `{s}`"))),
        }
    }
}

/// What a loss compares its prediction against.
#[derive(Debug, Clone, Copy)]
pub enum LossTarget<'a> {
    Values(Var),
    Classes(&'a [usize]),
}

/// Mean-reduced scalar loss.
///
/// With a mask (1 observed, 0 missing) the MSE averages over missing
/// positions only.
pub fn loss(
    g: &mut Graph,
    kind: LossKind,
    pred: Var,
    target: LossTarget<'_>,
    mask: Option<&Tensor>,
) -> Result<Var> {
    match (kind, target) {
        (LossKind::Mse, LossTarget::Values(y)) => match mask {
            None => {
                let d = g.sub(pred, y)?;
                let sq = g.square(d)?;
                g.mean(sq)
            }
            Some(m) => {
                let (sum, count) = masked_sq_error_sum(g, pred, y, m)?;
                if count == 0 {
                    return Err(Error::InvalidArgument(
                        "masked loss selects no positions".into(),
                    ));
                }
                g.scale(sum, 1.0 / count as f64)
            }
        },
        (LossKind::Smape, LossTarget::Values(y)) if mask.is_none() => g.smape(pred, y),
        (LossKind::CrossEntropy, LossTarget::Classes(c)) if mask.is_none() => {
            g.cross_entropy(pred, c)
        }
        _ => Err(Error::InvalidArgument(format!(
            "{kind:?} loss does not accept this target/mask combination"
        ))),
    }
}

/// Sum of squared errors over positions where `mask` is 0, and how many
/// such positions there are.
pub(crate) fn masked_sq_error_sum(
    g: &mut Graph,
    pred: Var,
    target: Var,
    mask: &Tensor,
) -> Result<(Var, usize)> {
    if mask.dims() != g.value(pred).dims() {
        return Err(Error::ShapeMismatch {
            op: "masked loss",
            left: g.value(pred).dims().to_vec(),
            right: mask.dims().to_vec(),
        });
    }
    let missing = mask.map(|m| if m == 0.0 { 1.0 } else { 0.0 });
    let count = missing.data().iter().filter(|&&v| v == 1.0).count();
    let w = g.constant(missing);
    let d = g.sub(pred, target)?;
    let d = g.mul(d, w)?;
    let sq = g.square(d)?;
    Ok((g.sum(sq)?, count))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_is_zero() {
        let mut g = Graph::new();
        let y = g.constant(Tensor::new(&[3], vec![1., -2., 3.]).unwrap());
        let p = g.param(Tensor::new(&[3], vec![1., -2., 3.]).unwrap());
        let l = loss(&mut g, LossKind::Mse, p, LossTarget::Values(y), None).unwrap();
        assert_eq!(g.value(l).data()[0], 0.0);
        let l = loss(&mut g, LossKind::Smape, p, LossTarget::Values(y), None).unwrap();
        assert_eq!(g.value(l).data()[0], 0.0);
    }

    #[test]
    fn uniform_cross_entropy() {
        let mut g = Graph::new();
        let logits = g.param(Tensor::zeros(&[2, 4]).unwrap());
        let l = loss(
            &mut g,
            LossKind::CrossEntropy,
            logits,
            LossTarget::Classes(&[0, 3]),
            None,
        )
        .unwrap();
        assert!((g.value(l).data()[0] - 1.386_294_361_119_890_6).abs() < 1e-12);
    }

    #[test]
    fn smape_value() {
        let mut g = Graph::new();
        let p = g.param(Tensor::scalar(110.0));
        let y = g.constant(Tensor::scalar(100.0));
        let l = loss(&mut g, LossKind::Smape, p, LossTarget::Values(y), None).unwrap();
        assert!((g.value(l).data()[0] - 9.523_809_523_809_524).abs() < 1e-12);
    }

    #[test]
    fn masked_mse_uses_missing_points_only() {
        let mut g = Graph::new();
        let p = g.param(Tensor::new(&[4], vec![1., 5., 3., 9.]).unwrap());
        let y = g.constant(Tensor::new(&[4], vec![1., 2., 3., 4.]).unwrap());
        let mask = Tensor::new(&[4], vec![1., 0., 1., 1.]).unwrap();
        let l = loss(&mut g, LossKind::Mse, p, LossTarget::Values(y), Some(&mask)).unwrap();
        assert_eq!(g.value(l).data()[0], 9.0);
        let all = Tensor::ones(&[4]).unwrap();
        assert!(loss(&mut g, LossKind::Mse, p, LossTarget::Values(y), Some(&all)).is_err());
    }

    #[test]
    fn mismatched_target_rejected() {
        let mut g = Graph::new();
        let p = g.param(Tensor::zeros(&[1, 2]).unwrap());
        assert!(loss(&mut g, LossKind::Mse, p, LossTarget::Classes(&[0]), None).is_err());
    }
}
