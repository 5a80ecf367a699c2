mod common;

use proptest::prelude::*;
use times2d::metrics::{linear_cka, mase, smape};
use times2d::model::StationarizationStats;
use times2d::spectral::rfft_amplitude;
use times2d::tensor::{Graph, Tensor};
use times2d::transform2d::{fold_tensor, unfold_tensor, FoldPlan};

fn series(max_len: usize, channels: usize) -> impl Strategy<Value = Tensor> {
    (2..max_len).prop_flat_map(move |t| {
        prop::collection::vec(-10.0f64..10.0, t * channels)
            .prop_map(move |v| Tensor::new(&[t, channels], v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(v in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let mut g = Graph::new();
        let n = v.len();
        let x = g.constant(Tensor::new(&[n], v).unwrap());
        let s = g.softmax(x, 0).unwrap();
        let out = g.value(s).data();
        prop_assert!(out.iter().all(|&p| (0.0..=1.0).contains(&p)));
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariant(v in prop::collection::vec(-5.0f64..5.0, 2..10), c in -100.0f64..100.0) {
        let mut g = Graph::new();
        let n = v.len();
        let a = g.constant(Tensor::new(&[n], v.clone()).unwrap());
        let b = g.constant(Tensor::new(&[n], v.iter().map(|x| x + c).collect()).unwrap());
        let (sa, sb) = (g.softmax(a, 0).unwrap(), g.softmax(b, 0).unwrap());
        prop_assert!(g.value(sa).max_abs_diff(g.value(sb)) < 1e-12);
    }

    #[test]
    fn fold_then_unfold_is_identity(x in series(60, 2), f_seed in 0usize..1000) {
        let t = x.dims()[0];
        let f = 1 + f_seed % t;
        let plan = FoldPlan::new(t, f).unwrap();
        prop_assert!(plan.pad_length < f);
        prop_assert_eq!(plan.period * f, t + plan.pad_length);
        let back = unfold_tensor(&fold_tensor(&x, &plan).unwrap(), &plan).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn parseval(x in series(80, 1)) {
        let t = x.dims()[0];
        let amp = rfft_amplitude(&x).unwrap();
        let a = amp.amplitudes();
        // one-sided spectrum: interior bins appear twice in the full DFT
        let mut energy = a[0] * a[0];
        for (f, &v) in a.iter().enumerate().skip(1) {
            let twice = !(t % 2 == 0 && f == t / 2);
            energy += if twice { 2.0 * v * v } else { v * v };
        }
        let time: f64 = x.data().iter().map(|v| v * v).sum();
        prop_assert!((energy / t as f64 - time).abs() <= 1e-8 * time.max(1.0));
    }

    #[test]
    fn amplitude_scales_linearly(x in series(50, 2), c in 0.1f64..10.0) {
        let a = rfft_amplitude(&x).unwrap();
        let b = rfft_amplitude(&x.map(|v| v * c)).unwrap();
        for (u, v) in a.amplitudes().iter().zip(b.amplitudes()) {
            prop_assert!((u * c - v).abs() <= 1e-9 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn stationarization_roundtrip(x in series(40, 3)) {
        let s = StationarizationStats::from_series(&x, None).unwrap();
        let back = s.denormalize(&s.normalize(&x, None));
        prop_assert!(back.max_abs_diff(&x) < 1e-9);
    }

    #[test]
    fn smape_symmetric_and_bounded(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..30)
    ) {
        let (p, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let a = smape(&p, &y).unwrap();
        let b = smape(&y, &p).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=200.0 + 1e-9).contains(&a));
    }

    #[test]
    fn mase_scale_invariant(
        insample in prop::collection::vec(-10.0f64..10.0, 6..30),
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..10),
        c in 0.01f64..100.0,
    ) {
        let (p, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let scaled = |v: &[f64]| v.iter().map(|x| x * c).collect::<Vec<_>>();
        if let Ok(a) = mase(&p, &y, &insample, 2) {
            let b = mase(&scaled(&p), &scaled(&y), &scaled(&insample), 2).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn cka_invariances(seed in 0u64..1000, angle in 0.0f64..std::f64::consts::TAU, c in 0.1f64..10.0) {
        let mut r = common::rng(seed);
        let a = common::random_tensor(&mut r, &[20, 2]);
        let b = common::random_tensor(&mut r, &[20, 3]);
        let base = linear_cka(&a, &b).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&base));
        let (s, co) = angle.sin_cos();
        let rotated: Vec<f64> = a
            .data()
            .chunks(2)
            .flat_map(|row| [c * (co * row[0] - s * row[1]), c * (s * row[0] + co * row[1])])
            .collect();
        let rotated = Tensor::new(&[20, 2], rotated).unwrap();
        prop_assert!((linear_cka(&rotated, &b).unwrap() - base).abs() < 1e-10);
    }
}
