//! Named parameter storage and the affine layer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

/// Flat, ordered collection of named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        dims: &[usize],
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Ok(self.add(name, Tensor::new(dims, data)?))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter on `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Bound(vars)
    }

    /// Gradients of all parameters after a backward pass; unreached
    /// parameters get zeros.
    pub fn gradients(&self, g: &Graph, bound: &Bound) -> Vec<Tensor> {
        self.tensors
            .iter()
            .zip(&bound.0)
            .map(|(t, &v)| {
                g.grad(v)
                    .unwrap_or_else(|| Tensor::from_parts(t.shape().clone(), vec![0.0; t.numel()]))
            })
            .collect()
    }

    /// Replaces all values, checking names and shapes.
    pub fn load(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Checkpoint("parameter names differ".into()));
        }
        for ((name, mine), theirs) in self.names.iter().zip(&self.tensors).zip(&other.tensors) {
            if mine.shape() != theirs.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {} but checkpoint holds {}",
                    mine.shape(),
                    theirs.shape()
                )));
            }
        }
        self.tensors = other.tensors.clone();
        Ok(())
    }
}

/// Graph variables for a [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// `y = x W + b` over the last axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let weight = store.add_uniform(
            format!("{name}.weight"),
            &[in_features, out_features],
            in_features,
            rng,
        )?;
        let bias = store.add_uniform(format!("{name}.bias"), &[out_features], in_features, rng)?;
        Ok(Linear {
            weight,
            bias,
            in_features,
            out_features,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let dims = g.value(x).dims().to_vec();
        let last = *dims.last().unwrap();
        if last != self.in_features {
            return Err(Error::ShapeMismatch {
                op: "linear",
                left: dims,
                right: vec![self.in_features, self.out_features],
            });
        }
        let rows = g.value(x).numel() / last;
        let flat = g.reshape(x, &[rows, last])?;
        let y = g.matmul(flat, p[self.weight])?;
        let y = g.add(y, p[self.bias])?;
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.out_features;
        g.reshape(y, &out_dims)
    }

    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.weight).data_mut().fill(0.0);
        store.get_mut(self.bias).data_mut().fill(0.0);
    }
}
