mod common;

use common::*;
use times2d::metrics::{argmax, linear_cka};
use times2d::model::{Head, ModelConfig, TimesNet};
use times2d::tensor::Tensor;
use times2d::Error;

fn model(head: Head, t: usize, c: usize) -> TimesNet {
    let mut cfg = ModelConfig::new(t, c, head);
    cfg.d_min = 8;
    cfg.d_max = 8;
    cfg.k = 2;
    cfg.seed = 3;
    TimesNet::new(cfg).unwrap()
}

/// `[B, T, C]` batch of shifted ramps plus a sinusoid, with distinct
/// per-channel offsets.
fn batch(b: usize, t: usize, c: usize) -> Tensor {
    let mut v = Vec::with_capacity(b * t * c);
    for s in 0..b {
        for i in 0..t {
            for ch in 0..c {
                let x = (i + s) as f64;
                v.push(10.0 * ch as f64 + 0.1 * x + (x * 0.7).sin());
            }
        }
    }
    Tensor::new(&[b, t, c], v).unwrap()
}

fn channel_means(x: &Tensor, b: usize) -> Vec<f64> {
    let (t, c) = (x.dims()[1], x.dims()[2]);
    (0..c)
        .map(|ch| (0..t).map(|i| x.data()[(b * t + i) * c + ch]).sum::<f64>() / t as f64)
        .collect()
}

#[test]
fn zero_head_forecast_is_channel_mean() {
    let mut m = model(Head::Forecast { horizon: 5 }, 16, 3);
    m.zero_head();
    let x = batch(2, 16, 3);
    let y = m.forecast(&x).unwrap();
    assert_eq!(y.dims(), &[2, 5, 3]);
    for b in 0..2 {
        let mu = channel_means(&x, b);
        for i in 0..5 {
            for (ch, m) in mu.iter().enumerate() {
                assert!((y.data()[(b * 5 + i) * 3 + ch] - m).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn zero_head_forecast_follows_affine_rescaling() {
    let mut m = model(Head::Forecast { horizon: 4 }, 12, 2);
    m.zero_head();
    let x = batch(1, 12, 2);
    let scaled = x.map(|v| 3.0 * v - 7.0);
    let (a, b) = (m.forecast(&x).unwrap(), m.forecast(&scaled).unwrap());
    for (u, v) in a.data().iter().zip(b.data()) {
        assert!((3.0 * u - 7.0 - v).abs() < 1e-9);
    }
}

#[test]
fn zero_head_reconstruction_is_channel_mean() {
    let mut m = model(Head::Reconstruction, 10, 2);
    m.zero_head();
    let x = batch(1, 10, 2);
    let y = m.reconstruct(&x).unwrap();
    assert_eq!(y.dims(), x.dims());
    let mu = channel_means(&x, 0);
    for (i, v) in y.data().iter().enumerate() {
        assert!((v - mu[i % 2]).abs() < 1e-9);
    }
}

#[test]
fn zero_head_classifier_ties() {
    let mut m = model(Head::Classification { classes: 3 }, 10, 2);
    m.zero_head();
    let logits = m.classify(&batch(2, 10, 2)).unwrap();
    assert_eq!(logits.dims(), &[2, 3]);
    assert!(logits.data().iter().all(|&v| v == 0.0));
    assert_eq!(argmax(&logits.data()[..3]), Some(0));
}

#[test]
fn full_mask_returns_input_exactly() {
    let m = model(Head::Imputation, 12, 2);
    let x = batch(2, 12, 2);
    let mask = Tensor::ones(x.dims()).unwrap();
    assert_eq!(m.impute(&x, &mask).unwrap(), x);
}

#[test]
fn empty_mask_is_an_error() {
    let m = model(Head::Imputation, 12, 2);
    let x = batch(2, 12, 2);
    let mut mask = Tensor::ones(x.dims()).unwrap();
    // sample 1, channel 1 has no observed points
    for i in 0..12 {
        mask.data_mut()[(12 + i) * 2 + 1] = 0.0;
    }
    match m.impute(&x, &mask) {
        Err(Error::NoObservedPoints { sample, channel }) => assert_eq!((sample, channel), (1, 1)),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn partial_mask_keeps_observed_points() {
    let m = model(Head::Imputation, 12, 2);
    let x = batch(1, 12, 2);
    let mask = Tensor::new(
        x.dims(),
        (0..24).map(|i| (i % 3 != 0) as u8 as f64).collect(),
    )
    .unwrap();
    let y = m.impute(&x, &mask).unwrap();
    for ((a, b), m) in y.data().iter().zip(x.data()).zip(mask.data()) {
        if *m == 1.0 {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn all_heads_finite_on_adversarial_inputs() {
    let (t, c) = (16, 2);
    let constant = Tensor::full(&[1, t, c], 5.0).unwrap();
    let mut spike = Tensor::zeros(&[1, t, c]).unwrap();
    spike.data_mut()[7] = 1e6;
    let random = random_tensor(&mut rng(4), &[1, t, c]).map(|v| v * 100.0);
    for x in [constant, spike, random] {
        let f = model(Head::Forecast { horizon: 3 }, t, c)
            .forecast(&x)
            .unwrap();
        let r = model(Head::Reconstruction, t, c).reconstruct(&x).unwrap();
        let l = model(Head::Classification { classes: 2 }, t, c)
            .classify(&x)
            .unwrap();
        let i = model(Head::Imputation, t, c)
            .impute(&x, &Tensor::ones(x.dims()).unwrap().map(|_| 1.0))
            .unwrap();
        for out in [f, r, l, i] {
            assert!(out.is_finite());
        }
    }
}

#[test]
fn wrong_channel_count_is_named() {
    let m = model(Head::Reconstruction, 10, 2);
    match m.reconstruct(&batch(1, 10, 3)) {
        Err(Error::ChannelMismatch { expected, found }) => assert_eq!((expected, found), (2, 3)),
        other => panic!("unexpected {other:?}"),
    }
    assert!(m.reconstruct(&batch(1, 11, 2)).is_err());
    assert!(m.forecast(&batch(1, 10, 2)).is_err());
}

#[test]
fn parameter_count_is_independent_of_k() {
    let counts: Vec<usize> = (1..=6)
        .map(|k| {
            let mut cfg = ModelConfig::new(24, 3, Head::Forecast { horizon: 6 });
            cfg.k = k;
            TimesNet::new(cfg).unwrap().num_params()
        })
        .collect();
    assert!(counts.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn layer_representations_support_cka() {
    let m = model(Head::Reconstruction, 16, 2);
    let reps = m
        .layer_representations(&batch(1, 16, 2).index_axis0(0).unwrap())
        .unwrap();
    assert_eq!(reps.len(), 3);
    for r in &reps {
        assert_eq!(r.dims(), &[16, 8]);
    }
    let s = linear_cka(&reps[0], &reps[2]).unwrap();
    assert!((0.0..=1.0 + 1e-12).contains(&s));
    assert!((linear_cka(&reps[1], &reps[1]).unwrap() - 1.0).abs() < 1e-12);
}
