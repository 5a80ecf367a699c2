use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(learning_rate: f64, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Nothing is modified if any gradient is
    /// non-finite; the error names the offending parameter.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (id, g) in params.ids().zip(grads) {
            if g.shape() != params.get(id).shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    left: params.get(id).dims().to_vec(),
                    right: g.dims().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(params.name(id).to_owned()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            let p = params.get_mut(id).data_mut();
            for (i, &g) in grads[k].data().iter().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= self.learning_rate * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(w));
        s
    }

    #[test]
    fn zero_gradient_is_no_op() {
        let mut s = scalar_store(1.5);
        let mut adam = AdamState::new(0.1, &s);
        for _ in 0..5 {
            adam.step(&mut s, &[Tensor::scalar(0.0)]).unwrap();
        }
        assert_eq!(s.iter().next().unwrap().1.data(), &[1.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scalar_store(0.0);
        let mut adam = AdamState::new(0.1, &s);
        adam.step(&mut s, &[Tensor::scalar(1.0)]).unwrap();
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
        let w = s.iter().next().unwrap().1.data()[0];
        assert!((w + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut s = scalar_store(0.0);
        let mut adam = AdamState::new(0.1, &s);
        for _ in 0..200 {
            let w = s.iter().next().unwrap().1.data()[0];
            adam.step(&mut s, &[Tensor::scalar(2.0 * (w - 3.0))])
                .unwrap();
        }
        let w = s.iter().next().unwrap().1.data()[0];
        assert!((w - 3.0).abs() < 0.05, "w = {w}");
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut s = scalar_store(0.0);
        let mut adam = AdamState::new(0.1, &s);
        match adam.step(&mut s, &[Tensor::scalar(f64::NAN)]) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "w"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(adam.steps(), 0);
    }
}
