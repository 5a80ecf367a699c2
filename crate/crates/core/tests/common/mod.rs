//! Independent reference implementations and small fixtures shared by the
//! integration tests. Nothing here calls the optimized kernels it checks.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use times2d::model::TimesNet;
use times2d::nn::{Bound, ParamStore};
use times2d::tensor::{Graph, Tensor, Var};
use times2d::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Channel-averaged `|X_f|` for `f = 0..=T/2` by the defining sum.
pub fn naive_dft_amplitude(x: &Tensor) -> Vec<f64> {
    let (t, c) = (x.dims()[0], x.dims()[1]);
    let d = x.data();
    (0..=t / 2)
        .map(|f| {
            (0..c)
                .map(|ch| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for n in 0..t {
                        let a = -2.0 * std::f64::consts::PI * (f * n) as f64 / t as f64;
                        re += d[n * c + ch] * a.cos();
                        im += d[n * c + ch] * a.sin();
                    }
                    re.hypot(im)
                })
                .sum::<f64>()
                / c as f64
        })
        .collect()
}

/// Same-padded NHWC convolution, one output element at a time.
pub fn naive_conv(x: &Tensor, k: &Tensor, b: &Tensor) -> Tensor {
    let [bn, h, w, ci] = x.dims()[..] else {
        panic!()
    };
    let [ks, _, _, co] = k.dims()[..] else {
        panic!()
    };
    let pad = (ks as isize - 1) / 2;
    let (xd, kd) = (x.data(), k.data());
    let mut out = vec![0.0; bn * h * w * co];
    for n in 0..bn {
        for y in 0..h {
            for xx in 0..w {
                for o in 0..co {
                    let mut acc = b.data()[o];
                    for ky in 0..ks {
                        for kx in 0..ks {
                            let sy = y as isize + ky as isize - pad;
                            let sx = xx as isize + kx as isize - pad;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            for i in 0..ci {
                                let xi = ((n * h + sy as usize) * w + sx as usize) * ci + i;
                                let ki = ((ky * ks + kx) * ci + i) * co + o;
                                acc += xd[xi] * kd[ki];
                            }
                        }
                    }
                    out[((n * h + y) * w + xx) * co + o] = acc;
                }
            }
        }
    }
    Tensor::new(&[bn, h, w, co], out).unwrap()
}

/// Gradients of `sum(naive_conv(x, k, b) * upstream)` with respect to
/// `x`, `k` and `b`, by direct accumulation over the same loops.
pub fn naive_conv_grads(x: &Tensor, k: &Tensor, up: &Tensor) -> (Tensor, Tensor, Tensor) {
    let [bn, h, w, ci] = x.dims()[..] else {
        panic!()
    };
    let [ks, _, _, co] = k.dims()[..] else {
        panic!()
    };
    let pad = (ks as isize - 1) / 2;
    let (xd, kd, ud) = (x.data(), k.data(), up.data());
    let mut gx = vec![0.0; xd.len()];
    let mut gk = vec![0.0; kd.len()];
    let mut gb = vec![0.0; co];
    for n in 0..bn {
        for y in 0..h {
            for xx in 0..w {
                for o in 0..co {
                    let u = ud[((n * h + y) * w + xx) * co + o];
                    gb[o] += u;
                    for ky in 0..ks {
                        for kx in 0..ks {
                            let sy = y as isize + ky as isize - pad;
                            let sx = xx as isize + kx as isize - pad;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            for i in 0..ci {
                                let xi = ((n * h + sy as usize) * w + sx as usize) * ci + i;
                                let ki = ((ky * ks + kx) * ci + i) * co + o;
                                gx[xi] += u * kd[ki];
                                gk[ki] += u * xd[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::new(x.dims(), gx).unwrap(),
        Tensor::new(k.dims(), gk).unwrap(),
        Tensor::new(&[co], gb).unwrap(),
    )
}

/// Relative error with a floor on the denominator so that coordinates
/// whose true gradient is numerically zero do not divide by roundoff.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_FLOOR)
}

pub const GRAD_FLOOR: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-6;

/// Worst relative error between reverse-mode and central-difference
/// gradients of a scalar function of several tensors, over every
/// coordinate (or `max_coords` random ones per input).
pub fn grad_check(
    inputs: &[Tensor],
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
    max_coords: Option<usize>,
    seed: u64,
) -> (f64, usize) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars).unwrap();
    g.backward(out).unwrap();
    let grads: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .unwrap_or_else(|| Tensor::zeros(t.dims()).unwrap())
        })
        .collect();

    let eval = |xs: &[Tensor]| {
        let mut g = Graph::new();
        let vs: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let o = f(&mut g, &vs).unwrap();
        g.value(o).data()[0]
    };
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (i, t) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match max_coords {
            Some(m) if m < t.numel() => (0..m).map(|_| r.random_range(0..t.numel())).collect(),
            _ => (0..t.numel()).collect(),
        };
        for j in coords {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[j] += FD_STEP;
            let up = eval(&xs);
            xs[i].data_mut()[j] -= 2.0 * FD_STEP;
            let down = eval(&xs);
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grads[i].data()[j], numeric));
            checked += 1;
        }
    }
    (worst, checked)
}

/// `sum(x * w)` for a fixed random `w`, so every output coordinate gets a
/// distinct upstream gradient.
pub fn random_projection(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let dims = g.value(x).dims().to_vec();
    let w = random_tensor(&mut rng(seed), &dims);
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    g.sum(p)
}

pub type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// One gradient test case per differentiable op: the op applied to random
/// inputs, reduced to a scalar through a random projection.
pub fn op_cases(seed: u64) -> Vec<(&'static str, Vec<Tensor>, OpFn)> {
    use times2d::transform2d::{fold, unfold_truncate, FoldPlan};
    let mut r = rng(seed);
    let mut t = |d: &[usize]| random_tensor(&mut r, d);
    let proj = |seed: u64| move |g: &mut Graph, y: Var| random_projection(g, y, seed);
    let mut cases: Vec<(&'static str, Vec<Tensor>, OpFn)> = Vec::new();
    macro_rules! case {
        ($name:expr, [$($d:expr),*], |$g:ident, $v:ident| $body:expr) => {{
            let p = proj(seed ^ cases.len() as u64);
            cases.push((
                $name,
                vec![$(t(&$d)),*],
                Box::new(move |$g: &mut Graph, $v: &[Var]| {
                    let y = $body?;
                    p($g, y)
                }),
            ));
        }};
    }
    case!("add", [[3, 4], [4]], |g, v| g.add(v[0], v[1]));
    case!("sub", [[3, 4], [3, 4]], |g, v| g.sub(v[0], v[1]));
    case!("mul", [[2, 3, 4], [3, 4]], |g, v| g.mul(v[0], v[1]));
    case!("scale", [[5]], |g, v| g.scale(v[0], -1.7));
    case!("add_scalar", [[5]], |g, v| g.add_scalar(v[0], 0.3));
    case!("mul_scalar_var", [[2, 3], [1]], |g, v| g
        .mul_scalar_var(v[0], v[1]));
    case!("square", [[6]], |g, v| g.square(v[0]));
    case!("gelu", [[3, 5]], |g, v| g.gelu(v[0]));
    case!("relu", [[3, 5]], |g, v| g.relu(v[0]));
    case!("matmul", [[3, 4], [4, 2]], |g, v| g.matmul(v[0], v[1]));
    case!("conv2d_same", [[2, 4, 3, 2], [3, 3, 2, 3], [3]], |g, v| g
        .conv2d_same(v[0], v[1], v[2]));
    case!("softmax", [[3, 4]], |g, v| g.softmax(v[0], 1));
    case!("softmax_axis0", [[3, 4]], |g, v| g.softmax(v[0], 0));
    case!("layer_norm", [[4, 6], [6], [6]], |g, v| g
        .layer_norm(v[0], v[1], v[2], 1e-5));
    case!("reshape", [[2, 6]], |g, v| g.reshape(v[0], &[3, 4]));
    case!("permute", [[2, 3, 4]], |g, v| g.permute(v[0], &[2, 0, 1]));
    case!("fold_unfold", [[11, 2]], |g, v| {
        let plan = FoldPlan::new(11, 3)?;
        let y = fold(g, v[0], &plan)?;
        let y = g.square(y)?;
        unfold_truncate(g, y, &plan)
    });
    case!("stack", [[2, 3], [2, 3]], |g, v| g.stack(&[v[0], v[1]]));
    case!("narrow", [[4, 5]], |g, v| g.narrow(v[0], 1, 1, 3));
    case!("select", [[4, 5]], |g, v| g.select(v[0], 2));
    case!("sum", [[3, 3]], |g, v| {
        let s = g.sum(v[0])?;
        g.square(s)
    });
    case!("mean", [[3, 3]], |g, v| {
        let s = g.mean(v[0])?;
        g.square(s)
    });
    case!("dft_amplitude", [[12, 3]], |g, v| g
        .dft_amplitude(v[0], &[1, 2, 5]));
    cases.push((
        "cross_entropy",
        vec![t(&[3, 4])],
        Box::new(|g: &mut Graph, v: &[Var]| g.cross_entropy(v[0], &[1, 3, 0])),
    ));
    cases.push((
        "smape",
        vec![t(&[8]), t(&[8])],
        Box::new(|g: &mut Graph, v: &[Var]| g.smape(v[0], v[1])),
    ));
    cases
}

/// Central-difference check of every parameter gradient of `f` over
/// `coords` coordinates drawn uniformly from the whole store.
pub fn store_grad_check(
    store: &mut ParamStore,
    f: impl Fn(&mut Graph, &Bound) -> Result<Var>,
    coords: usize,
    seed: u64,
) -> (f64, usize) {
    let mut g = Graph::new();
    let p = store.bind(&mut g, true);
    let l = f(&mut g, &p).unwrap();
    g.backward(l).unwrap();
    let grads = store.gradients(&g, &p);
    let value = |s: &ParamStore| {
        let mut g = Graph::new();
        let p = s.bind(&mut g, false);
        let l = f(&mut g, &p).unwrap();
        g.value(l).data()[0]
    };
    let ids: Vec<_> = store.ids().collect();
    let sizes: Vec<usize> = ids.iter().map(|&id| store.get(id).numel()).collect();
    let total: usize = sizes.iter().sum();
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..coords {
        let mut flat = r.random_range(0..total);
        let mut k = 0;
        while flat >= sizes[k] {
            flat -= sizes[k];
            k += 1;
        }
        let id = ids[k];
        let orig = store.get(id).data()[flat];
        store.get_mut(id).data_mut()[flat] = orig + FD_STEP;
        let up = value(store);
        store.get_mut(id).data_mut()[flat] = orig - FD_STEP;
        let down = value(store);
        store.get_mut(id).data_mut()[flat] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(grads[k].data()[flat], numeric));
    }
    (worst, coords)
}

/// [`store_grad_check`] on `sum(forecast(x) * w)` for a forecast model.
pub fn model_grad_check(
    model: &mut TimesNet,
    x: &Tensor,
    coords: usize,
    seed: u64,
) -> (f64, usize) {
    let frozen = model.clone();
    store_grad_check(
        model.params_mut(),
        |g, p| {
            let y = frozen.forecast_sample(g, p, x)?;
            random_projection(g, y, seed)
        },
        coords,
        seed,
    )
}

/// `amplitude * sin(2 pi t / period + phase)` sampled at `t = 0..len`, as a
/// `[len, 1]` tensor.
pub fn sine(len: usize, period: f64, phase: f64) -> Tensor {
    Tensor::new(
        &[len, 1],
        (0..len)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / period + phase).sin())
            .collect(),
    )
    .unwrap()
}
