mod common;

use common::*;
use rand::Rng;
use times2d::model::{Head, ModelConfig, TimesNet};
use times2d::spectral::{fft_real, rfft_amplitude};
use times2d::tensor::{Graph, Tensor};

#[test]
fn spectrum_matches_naive_dft() {
    let mut r = rng(1);
    for t in [2, 3, 7, 16, 24, 31, 64, 96, 97] {
        for c in [1, 3] {
            let x = random_tensor(&mut r, &[t, c]);
            let got = rfft_amplitude(&x).unwrap();
            let want = naive_dft_amplitude(&x);
            let scale = want.iter().cloned().fold(0.0, f64::max);
            for (a, b) in got.amplitudes().iter().zip(&want) {
                assert!((a - b).abs() <= 1e-9 * scale, "T={t} C={c}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn complex_fft_conjugate_symmetry() {
    let mut r = rng(2);
    let x: Vec<f64> = (0..45).map(|_| r.random_range(-1.0..1.0)).collect();
    let y = fft_real(&x);
    for k in 1..45 {
        assert!((y[k] - y[45 - k].conj()).norm() < 1e-10);
    }
    assert!((y[0].re - x.iter().sum::<f64>()).abs() < 1e-12);
}

#[test]
fn conv_matches_naive_loops() {
    let mut r = rng(3);
    for _ in 0..10 {
        let b = r.random_range(1..3);
        let h = r.random_range(1..7);
        let w = r.random_range(1..7);
        let ci = r.random_range(1..4);
        let co = r.random_range(1..4);
        let k = [1, 3, 5][r.random_range(0..3)];
        let x = random_tensor(&mut r, &[b, h, w, ci]);
        let kern = random_tensor(&mut r, &[k, k, ci, co]);
        let bias = random_tensor(&mut r, &[co]);
        let up = random_tensor(&mut r, &[b, h, w, co]);

        let mut g = Graph::new();
        let (xv, kv, bv) = (
            g.param(x.clone()),
            g.param(kern.clone()),
            g.param(bias.clone()),
        );
        let y = g.conv2d_same(xv, kv, bv).unwrap();
        assert!(g.value(y).max_abs_diff(&naive_conv(&x, &kern, &bias)) < 1e-12);
        let u = g.constant(up.clone());
        let p = g.mul(y, u).unwrap();
        let l = g.sum(p).unwrap();
        g.backward(l).unwrap();
        let (gx, gk, gb) = naive_conv_grads(&x, &kern, &up);
        assert!(g.grad(xv).unwrap().max_abs_diff(&gx) < 1e-12);
        assert!(g.grad(kv).unwrap().max_abs_diff(&gk) < 1e-12);
        assert!(g.grad(bv).unwrap().max_abs_diff(&gb) < 1e-12);
    }
}

#[test]
fn every_op_passes_finite_differences() {
    for (name, inputs, f) in op_cases(4) {
        let (err, n) = grad_check(&inputs, &f, None, 5);
        assert!(n > 0);
        assert!(err < 1e-4, "{name}: relative error {err}");
    }
}

#[test]
fn small_forecast_model_gradients() {
    let mut cfg = ModelConfig::new(24, 2, Head::Forecast { horizon: 6 });
    cfg.d_min = 4;
    cfg.d_max = 4;
    cfg.k = 2;
    cfg.seed = 9;
    let mut m = TimesNet::new(cfg).unwrap();
    let x = random_tensor(&mut rng(10), &[24, 2]);
    let (err, _) = model_grad_check(&mut m, &x, 60, 11);
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn all_zero_input_is_handled() {
    let x = Tensor::zeros(&[8, 2]).unwrap();
    let s = rfft_amplitude(&x).unwrap();
    assert!(s.amplitudes().iter().all(|&a| a == 0.0));
}
