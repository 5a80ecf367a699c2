use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn centered(x: &Tensor) -> Result<(usize, usize, Vec<f64>)> {
    let [n, d] = x.dims()[..] else {
        return Err(Error::InvalidArgument(format!(
            "CKA expects [N, d] matrices, got {:?}",
            x.dims()
        )));
    };
    if n < 2 {
        return Err(Error::InvalidArgument("CKA needs at least two rows".into()));
    }
    let mut data = x.data().to_vec();
    for j in 0..d {
        let mean = (0..n).map(|i| data[i * d + j]).sum::<f64>() / n as f64;
        for i in 0..n {
            data[i * d + j] -= mean;
        }
    }
    Ok((n, d, data))
}

/// `||Bᵀ A||_F²` for column-major products of row-major `[n, da]` and `[n, db]`.
fn cross_frobenius_sq(n: usize, a: &[f64], da: usize, b: &[f64], db: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..da {
        for j in 0..db {
            let dot: f64 = (0..n).map(|r| a[r * da + i] * b[r * db + j]).sum();
            total += dot * dot;
        }
    }
    total
}

/// Linear centered kernel alignment between two representations of the
/// same `N` inputs. Invariant to orthogonal transforms and isotropic
/// scaling of either argument.
pub fn linear_cka(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (na, da, ca) = centered(a)?;
    let (nb, db, cb) = centered(b)?;
    if na != nb {
        return Err(Error::ShapeMismatch {
            op: "linear_cka",
            left: a.dims().to_vec(),
            right: b.dims().to_vec(),
        });
    }
    let ab = cross_frobenius_sq(na, &ca, da, &cb, db);
    let aa = cross_frobenius_sq(na, &ca, da, &ca, da).sqrt();
    let bb = cross_frobenius_sq(na, &cb, db, &cb, db).sqrt();
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(ab / (aa * bb))
}
