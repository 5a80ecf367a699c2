use std::sync::atomic::{AtomicU64, Ordering};

use super::conv::{self, ConvGeometry};
use super::{Shape, Tensor};
use crate::error::{Error, Result};

static NEXT_GRAPH: AtomicU64 = AtomicU64::new(1);

/// Sentinel in gather indices: the output element is zero.
const ZERO_SLOT: usize = usize::MAX;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MulScalarVar(usize, usize),
    MatMul(usize, usize),
    Conv2d {
        input: usize,
        kernel: usize,
        bias: usize,
        geo: ConvGeometry,
    },
    Gelu(usize),
    Relu(usize),
    Softmax {
        input: usize,
        axis: usize,
    },
    LayerNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Reshape(usize),
    Permute {
        input: usize,
        perm: Vec<usize>,
    },
    Gather {
        input: usize,
        index: Vec<usize>,
    },
    Stack(Vec<usize>),
    Narrow {
        input: usize,
        axis: usize,
        start: usize,
    },
    Sum(usize),
    Mean(usize),
    DftAmplitude {
        input: usize,
        freqs: Vec<usize>,
        re: Vec<f64>,
        im: Vec<f64>,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Smape {
        pred: usize,
        target: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MulScalarVar(..) => "mul_scalar_var",
            Op::MatMul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d_same",
            Op::Gelu(..) => "gelu",
            Op::Relu(..) => "relu",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Reshape(..) => "reshape",
            Op::Permute { .. } => "permute",
            Op::Gather { .. } => "gather",
            Op::Stack(..) => "stack",
            Op::Narrow { .. } => "narrow",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::DftAmplitude { .. } => "dft_amplitude",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Smape { .. } => "smape",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only tape of values and the operations that produced them.
///
/// Built fresh for every forward pass. Nodes are stored in creation order,
/// which is a topological order of the computation.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Splits `dims` around `axis` into (outer, len, inner) extents.
fn split_axis(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        None => *slot = Some(g),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    /// Records a trainable leaf; [`Graph::grad`] reports its gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.index].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.index)?.as_ref()?;
        Some(Tensor::from_parts(
            self.nodes[v.index].value.shape().clone(),
            g.clone(),
        ))
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let rg = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push_unchecked(value, op, rg))
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.index)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    // ---------------------------------------------------------------
    // elementwise

    fn broadcast_check(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa.has_suffix(sb) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op,
                left: sa.dims().to_vec(),
                right: sb.dims().to_vec(),
            })
        }
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: impl Fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.broadcast_check(op, ia, ib)?;
        let (ta, tb) = (self.val(ia), self.val(ib));
        let bd = tb.data();
        let n = bd.len();
        let data: Vec<f64> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i % n]))
            .collect();
        let out = Tensor::from_parts(ta.shape().clone(), data);
        self.push(out, mk(ia, ib), &[ia, ib])
    }

    /// `a + b`, with `b` broadcast over the leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(|x| x * c);
        self.push(out, Op::Scale(ia, c), &[ia])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(|x| x + c);
        self.push(out, Op::AddScalar(ia), &[ia])
    }

    /// `a * s` where `s` holds a single element.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ia, is) = (self.idx(a)?, self.idx(s)?);
        let c = self.val(is).item().ok_or_else(|| Error::ShapeMismatch {
            op: "mul_scalar_var",
            left: self.val(ia).dims().to_vec(),
            right: self.val(is).dims().to_vec(),
        })?;
        let out = self.val(ia).map(|x| x * c);
        self.push(out, Op::MulScalarVar(ia, is), &[ia, is])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(gelu);
        self.push(out, Op::Gelu(ia), &[ia])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(|x| x.max(0.0));
        self.push(out, Op::Relu(ia), &[ia])
    }

    // ---------------------------------------------------------------
    // linear algebra and convolution

    /// Matrix product of `[m, n]` and `[n, p]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (da, db) = (self.val(ia).dims(), self.val(ib).dims());
        if da.len() != 2 || db.len() != 2 || da[1] != db[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: da.to_vec(),
                right: db.to_vec(),
            });
        }
        let (m, n, p) = (da[0], da[1], db[1]);
        let out = matmul_raw(self.val(ia).data(), self.val(ib).data(), m, n, p);
        self.push(
            Tensor::from_parts(Shape(vec![m, p]), out),
            Op::MatMul(ia, ib),
            &[ia, ib],
        )
    }

    /// Same-padded 2D convolution of `[B, H, W, Cin]` with `[k, k, Cin, Cout]`
    /// plus a `[Cout]` bias. `k` must be odd.
    pub fn conv2d_same(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (ii, ik, ib) = (self.idx(input)?, self.idx(kernel)?, self.idx(bias)?);
        let (di, dk, db) = (
            self.val(ii).dims(),
            self.val(ik).dims(),
            self.val(ib).dims(),
        );
        if dk.len() != 4 || dk[0] != dk[1] {
            return Err(Error::InvalidArgument(format!(
                "conv2d_same: kernel must be [k, k, Cin, Cout], got {dk:?}"
            )));
        }
        if dk[0] % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv2d_same: kernel size {} is even",
                dk[0]
            )));
        }
        if di.len() != 4 || di[3] != dk[2] || db != [dk[3]] {
            return Err(Error::ShapeMismatch {
                op: "conv2d_same",
                left: di.to_vec(),
                right: dk.to_vec(),
            });
        }
        let geo = ConvGeometry {
            batch: di[0],
            height: di[1],
            width: di[2],
            c_in: di[3],
            c_out: dk[3],
            kernel: dk[0],
        };
        let out = conv::forward(
            &geo,
            self.val(ii).data(),
            self.val(ik).data(),
            self.val(ib).data(),
        );
        let shape = Shape(vec![geo.batch, geo.height, geo.width, geo.c_out]);
        self.push(
            Tensor::from_parts(shape, out),
            Op::Conv2d {
                input: ii,
                kernel: ik,
                bias: ib,
                geo,
            },
            &[ii, ik, ib],
        )
    }

    // ---------------------------------------------------------------
    // normalization

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = self.val(ia);
        if axis >= t.shape().rank() {
            return Err(Error::InvalidArgument(format!(
                "softmax: axis {axis} out of range for {}",
                t.shape()
            )));
        }
        let (outer, len, inner) = split_axis(t.dims(), axis);
        let x = t.data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..len {
                    let e = (x[at(j)] - max).exp();
                    out[at(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    out[at(j)] /= z;
                }
            }
        }
        let out = Tensor::from_parts(t.shape().clone(), out);
        self.push(out, Op::Softmax { input: ia, axis }, &[ia])
    }

    /// Normalizes over the last axis, then applies `gamma * x + beta`.
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (ia, ig, ib) = (self.idx(a)?, self.idx(gamma)?, self.idx(beta)?);
        let t = self.val(ia);
        let d = *t.dims().last().unwrap();
        for &p in &[ig, ib] {
            if self.val(p).dims() != [d] {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    left: t.dims().to_vec(),
                    right: self.val(p).dims().to_vec(),
                });
            }
        }
        let (g, b) = (self.val(ig).data(), self.val(ib).data());
        let rows = t.numel() / d;
        let mut xhat = vec![0.0; t.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; t.numel()];
        for r in 0..rows {
            let row = &t.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = g[j] * xh + b[j];
            }
        }
        let out = Tensor::from_parts(t.shape().clone(), out);
        self.push(
            out,
            Op::LayerNorm {
                input: ia,
                gamma: ig,
                beta: ib,
                xhat,
                inv_std,
            },
            &[ia, ig, ib],
        )
    }

    // ---------------------------------------------------------------
    // layout

    pub fn reshape(&mut self, a: Var, dims: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).clone().reshape(dims)?;
        self.push(out, Op::Reshape(ia), &[ia])
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = self.val(ia);
        let dims = t.dims();
        let mut seen = vec![false; dims.len()];
        if perm.len() != dims.len()
            || perm
                .iter()
                .any(|&p| p >= dims.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::InvalidArgument(format!(
                "permute: {perm:?} is not a permutation of {} axes",
                dims.len()
            )));
        }
        let out_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
        let data = permute_raw(t.data(), dims, perm);
        self.push(
            Tensor::from_parts(Shape(out_dims), data),
            Op::Permute {
                input: ia,
                perm: perm.to_vec(),
            },
            &[ia],
        )
    }

    /// `out[i] = a[index[i]]`, or zero where `index[i]` is `None`.
    pub fn gather(&mut self, a: Var, index: &[Option<usize>], dims: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let shape = Shape::new(dims)?;
        let src = self.val(ia).data();
        if shape.numel() != index.len() {
            return Err(Error::DataLength {
                op: "gather",
                len: index.len(),
                shape: dims.to_vec(),
            });
        }
        let mut raw = Vec::with_capacity(index.len());
        let mut data = Vec::with_capacity(index.len());
        for ix in index {
            match *ix {
                Some(i) if i < src.len() => {
                    raw.push(i);
                    data.push(src[i]);
                }
                Some(i) => {
                    return Err(Error::InvalidArgument(format!(
                        "gather: index {i} out of range for {} elements",
                        src.len()
                    )))
                }
                None => {
                    raw.push(ZERO_SLOT);
                    data.push(0.0);
                }
            }
        }
        self.push(
            Tensor::from_parts(shape, data),
            Op::Gather {
                input: ia,
                index: raw,
            },
            &[ia],
        )
    }

    /// Stacks equally shaped values along a new leading axis.
    pub fn stack(&mut self, items: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = items.iter().map(|&v| self.idx(v)).collect::<Result<_>>()?;
        let vals: Vec<Tensor> = idx.iter().map(|&i| self.val(i).clone()).collect();
        let out = Tensor::stack(&vals)?;
        self.push(out, Op::Stack(idx.clone()), &idx)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = self.val(ia);
        let dims = t.dims();
        if axis >= dims.len() || len == 0 || start + len > dims[axis] {
            return Err(Error::InvalidArgument(format!(
                "narrow: [{start}, {}) on axis {axis} of {}",
                start + len,
                t.shape()
            )));
        }
        let (outer, n, inner) = split_axis(dims, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            data.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut out_dims = dims.to_vec();
        out_dims[axis] = len;
        self.push(
            Tensor::from_parts(Shape(out_dims), data),
            Op::Narrow {
                input: ia,
                axis,
                start,
            },
            &[ia],
        )
    }

    /// Row `i` of the leading axis, keeping the remaining axes.
    pub fn select(&mut self, a: Var, i: usize) -> Result<Var> {
        let row = self.narrow(a, 0, i, 1)?;
        let dims = self.value(row).dims().to_vec();
        if dims.len() == 1 {
            Ok(row)
        } else {
            self.reshape(row, &dims[1..])
        }
    }

    // ---------------------------------------------------------------
    // reductions and losses

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = self.val(ia).sum();
        self.push(Tensor::scalar(s), Op::Sum(ia), &[ia])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = self.val(ia);
        let m = t.sum() / t.numel() as f64;
        self.push(Tensor::scalar(m), Op::Mean(ia), &[ia])
    }

    /// Channel-averaged DFT magnitude of a `[T, C]` series at the given
    /// frequency bins; output has one entry per bin.
    pub fn dft_amplitude(&mut self, a: Var, freqs: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = self.val(ia);
        if t.shape().rank() != 2 || freqs.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "dft_amplitude: expected [T, C] input and at least one bin, got {}",
                t.shape()
            )));
        }
        let (len, ch) = (t.dims()[0], t.dims()[1]);
        let x = t.data();
        let mut re = vec![0.0; freqs.len() * ch];
        let mut im = vec![0.0; freqs.len() * ch];
        let mut out = vec![0.0; freqs.len()];
        for (fi, &f) in freqs.iter().enumerate() {
            for tt in 0..len {
                let theta = dft_angle(f, tt, len);
                let (s, c) = theta.sin_cos();
                for cc in 0..ch {
                    let v = x[tt * ch + cc];
                    re[fi * ch + cc] += v * c;
                    im[fi * ch + cc] -= v * s;
                }
            }
            out[fi] = (0..ch)
                .map(|cc| re[fi * ch + cc].hypot(im[fi * ch + cc]))
                .sum::<f64>()
                / ch as f64;
        }
        self.push(
            Tensor::from_parts(Shape(vec![freqs.len()]), out),
            Op::DftAmplitude {
                input: ia,
                freqs: freqs.to_vec(),
                re,
                im,
            },
            &[ia],
        )
    }

    /// Mean over rows of `-log softmax(logits)[target]` for `[N, K]` logits.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let il = self.idx(logits)?;
        let t = self.val(il);
        let dims = t.dims();
        if dims.len() != 2 || dims[0] != targets.len() {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                left: dims.to_vec(),
                right: vec![targets.len()],
            });
        }
        let (n, k) = (dims[0], dims[1]);
        if let Some(&bad) = targets.iter().find(|&&c| c >= k) {
            return Err(Error::InvalidArgument(format!(
                "cross_entropy: class {bad} out of range for {k} classes"
            )));
        }
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for r in 0..n {
            let row = &t.data()[r * k..(r + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + z.ln();
            for j in 0..k {
                probs[r * k + j] = (row[j] - log_z).exp();
            }
            loss += log_z - row[targets[r]];
        }
        self.push(
            Tensor::scalar(loss / n as f64),
            Op::CrossEntropy {
                logits: il,
                targets: targets.to_vec(),
                probs,
            },
            &[il],
        )
    }

    /// Mean of `200 |p - y| / (|p| + |y|)` over elements; terms whose
    /// denominator is below `1e-8` contribute zero.
    pub fn smape(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (ip, it) = (self.idx(pred)?, self.idx(target)?);
        let (p, y) = (self.val(ip), self.val(it));
        if p.shape() != y.shape() {
            return Err(Error::ShapeMismatch {
                op: "smape",
                left: p.dims().to_vec(),
                right: y.dims().to_vec(),
            });
        }
        let total: f64 = p
            .data()
            .iter()
            .zip(y.data())
            .map(|(&a, &b)| smape_term(a, b))
            .sum();
        let m = 200.0 * total / p.numel() as f64;
        self.push(
            Tensor::scalar(m),
            Op::Smape {
                pred: ip,
                target: it,
            },
            &[ip, it],
        )
    }

    // ---------------------------------------------------------------
    // backward

    /// Accumulates `d loss / d leaf` into every trainable leaf reachable
    /// from `loss`. Repeated calls add to the existing gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let il = self.idx(loss)?;
        let node = &self.nodes[il];
        if node.value.numel() != 1 {
            return Err(Error::NotScalar(node.value.dims().to_vec()));
        }
        if !node.requires_grad {
            return Err(Error::Detached);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; il + 1];
        grads[il] = Some(vec![1.0]);
        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                if self.grads.len() < self.nodes.len() {
                    self.grads.resize(self.nodes.len(), None);
                }
                accumulate(&mut self.grads[i], g);
                continue;
            }
            for (target, contrib) in self.local_grads(i, &g) {
                if self.nodes[target].requires_grad {
                    accumulate(&mut grads[target], contrib);
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for upstream gradient `g`.
    fn local_grads(&self, i: usize, g: &[f64]) -> Vec<(usize, Vec<f64>)> {
        let node = &self.nodes[i];
        let rg = |j: usize| self.nodes[j].requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            &Op::Add(a, b) => vec![
                (a, g.to_vec()),
                (b, reduce_broadcast(g, self.val(b).numel())),
            ],
            &Op::Sub(a, b) => {
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                vec![
                    (a, g.to_vec()),
                    (b, reduce_broadcast(&neg, self.val(b).numel())),
                ]
            }
            &Op::Mul(a, b) => {
                let (xa, xb) = (self.val(a).data(), self.val(b).data());
                let n = xb.len();
                let mut out = vec![];
                if rg(a) {
                    out.push((
                        a,
                        g.iter().enumerate().map(|(k, v)| v * xb[k % n]).collect(),
                    ));
                }
                if rg(b) {
                    let prod: Vec<f64> = g.iter().zip(xa).map(|(v, x)| v * x).collect();
                    out.push((b, reduce_broadcast(&prod, n)));
                }
                out
            }
            &Op::Scale(a, c) => vec![(a, g.iter().map(|v| v * c).collect())],
            &Op::AddScalar(a) => vec![(a, g.to_vec())],
            &Op::MulScalarVar(a, s) => {
                let c = self.val(s).data()[0];
                let xa = self.val(a).data();
                let ds: f64 = g.iter().zip(xa).map(|(v, x)| v * x).sum();
                vec![(a, g.iter().map(|v| v * c).collect()), (s, vec![ds])]
            }
            &Op::MatMul(a, b) => {
                let (ta, tb) = (self.val(a), self.val(b));
                let (m, n, p) = (ta.dims()[0], ta.dims()[1], tb.dims()[1]);
                let mut out = vec![];
                if rg(a) {
                    // dA = G · Bᵀ
                    let bt = permute_raw(tb.data(), &[n, p], &[1, 0]);
                    out.push((a, matmul_raw(g, &bt, m, p, n)));
                }
                if rg(b) {
                    // dB = Aᵀ · G
                    let at = permute_raw(ta.data(), &[m, n], &[1, 0]);
                    out.push((b, matmul_raw(&at, g, n, m, p)));
                }
                out
            }
            &Op::Conv2d {
                input,
                kernel,
                bias,
                geo,
            } => {
                let (gi, gk, gb) =
                    conv::backward(&geo, self.val(input).data(), self.val(kernel).data(), g);
                vec![(input, gi), (kernel, gk), (bias, gb)]
            }
            &Op::Gelu(a) => vec![(
                a,
                g.iter()
                    .zip(self.val(a).data())
                    .map(|(v, &x)| v * gelu_grad(x))
                    .collect(),
            )],
            &Op::Relu(a) => vec![(
                a,
                g.iter()
                    .zip(self.val(a).data())
                    .map(|(v, &x)| if x > 0.0 { *v } else { 0.0 })
                    .collect(),
            )],
            &Op::Softmax { input, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(node.value.dims(), axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let at = |j: usize| o * len * inner + j * inner + ii;
                        let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..len {
                            dx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                vec![(input, dx)]
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gam = self.val(*gamma).data();
                let d = gam.len();
                let rows = xhat.len() / d;
                let mut dx = vec![0.0; xhat.len()];
                let mut dg = vec![0.0; d];
                let mut db = vec![0.0; d];
                for r in 0..rows {
                    let (xh, gr) = (&xhat[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..d {
                        dg[j] += gr[j] * xh[j];
                        db[j] += gr[j];
                        let dxh = gr[j] * gam[j];
                        s1 += dxh;
                        s2 += dxh * xh[j];
                    }
                    let k = inv_std[r] / d as f64;
                    for j in 0..d {
                        let dxh = gr[j] * gam[j];
                        dx[r * d + j] = k * (d as f64 * dxh - s1 - xh[j] * s2);
                    }
                }
                vec![(*input, dx), (*gamma, dg), (*beta, db)]
            }
            &Op::Reshape(a) => vec![(a, g.to_vec())],
            Op::Permute { input, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                vec![(*input, permute_raw(g, node.value.dims(), &inv))]
            }
            Op::Gather { input, index } => {
                let mut dx = vec![0.0; self.val(*input).numel()];
                for (&ix, &v) in index.iter().zip(g) {
                    if ix != ZERO_SLOT {
                        dx[ix] += v;
                    }
                }
                vec![(*input, dx)]
            }
            Op::Stack(items) => {
                let n = g.len() / items.len();
                items
                    .iter()
                    .enumerate()
                    .map(|(k, &it)| (it, g[k * n..(k + 1) * n].to_vec()))
                    .collect()
            }
            &Op::Narrow { input, axis, start } => {
                let dims = self.val(input).dims();
                let (outer, n, inner) = split_axis(dims, axis);
                let len = node.value.dims()[axis];
                let mut dx = vec![0.0; self.val(input).numel()];
                for o in 0..outer {
                    let base = o * n * inner + start * inner;
                    dx[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![(input, dx)]
            }
            &Op::Sum(a) => vec![(a, vec![g[0]; self.val(a).numel()])],
            &Op::Mean(a) => {
                let n = self.val(a).numel();
                vec![(a, vec![g[0] / n as f64; n])]
            }
            Op::DftAmplitude {
                input,
                freqs,
                re,
                im,
            } => {
                let t = self.val(*input);
                let (len, ch) = (t.dims()[0], t.dims()[1]);
                let mut dx = vec![0.0; t.numel()];
                for (fi, &f) in freqs.iter().enumerate() {
                    let scale = g[fi] / ch as f64;
                    for tt in 0..len {
                        let (s, c) = dft_angle(f, tt, len).sin_cos();
                        for cc in 0..ch {
                            let (r, m) = (re[fi * ch + cc], im[fi * ch + cc]);
                            let mag = r.hypot(m);
                            if mag > 0.0 {
                                dx[tt * ch + cc] += scale * (r * c - m * s) / mag;
                            }
                        }
                    }
                }
                vec![(*input, dx)]
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let n = targets.len();
                let k = probs.len() / n;
                let scale = g[0] / n as f64;
                let mut dx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &c) in targets.iter().enumerate() {
                    dx[r * k + c] -= scale;
                }
                vec![(*logits, dx)]
            }
            &Op::Smape { pred, target } => {
                let (p, y) = (self.val(pred).data(), self.val(target).data());
                let scale = 200.0 * g[0] / p.len() as f64;
                let mut dp = vec![0.0; p.len()];
                let mut dy = vec![0.0; p.len()];
                for k in 0..p.len() {
                    let (a, b) = (p[k], y[k]);
                    let den = a.abs() + b.abs();
                    if den < SMAPE_GUARD {
                        continue;
                    }
                    let num = (a - b).abs();
                    let s = sign(a - b);
                    dp[k] = scale * (s / den - num * sign(a) / (den * den));
                    dy[k] = scale * (-s / den - num * sign(b) / (den * den));
                }
                vec![(pred, dp), (target, dy)]
            }
        }
    }
}

pub(crate) const SMAPE_GUARD: f64 = 1e-8;

fn smape_term(a: f64, b: f64) -> f64 {
    let den = a.abs() + b.abs();
    if den < SMAPE_GUARD {
        0.0
    } else {
        (a - b).abs() / den
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn dft_angle(f: usize, t: usize, len: usize) -> f64 {
    // reduce f*t mod len first so the angle stays small and exact
    2.0 * std::f64::consts::PI * ((f * t) % len) as f64 / len as f64
}

fn reduce_broadcast(g: &[f64], n: usize) -> Vec<f64> {
    if g.len() == n {
        return g.to_vec();
    }
    let mut out = vec![0.0; n];
    for chunk in g.chunks_exact(n) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let row = &mut out[i * p..(i + 1) * p];
        for k in 0..n {
            let av = a[i * n + k];
            let brow = &b[k * p..(k + 1) * p];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn permute_raw(x: &[f64], dims: &[usize], perm: &[usize]) -> Vec<f64> {
    let in_strides = strides(dims);
    let out_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut counter = vec![0usize; out_dims.len()];
    let mut offset = 0usize;
    for _ in 0..x.len() {
        out.push(x[offset]);
        for ax in (0..out_dims.len()).rev() {
            counter[ax] += 1;
            offset += src_strides[ax];
            if counter[ax] < out_dims[ax] {
                break;
            }
            offset -= src_strides[ax] * out_dims[ax];
            counter[ax] = 0;
        }
    }
    out
}
