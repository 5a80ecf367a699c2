//! Complex FFT of arbitrary length.
//!
//! Power-of-two lengths use an iterative radix-2 Cooley-Tukey transform.
//! Every other length goes through Bluestein's chirp-z algorithm, which
//! re-expresses the DFT as a circular convolution of power-of-two size.

use std::f64::consts::PI;

use num_complex::Complex64;

/// Precomputed state for forward transforms of one length.
#[derive(Debug, Clone)]
pub struct FftPlan {
    len: usize,
    kind: PlanKind,
}

#[derive(Debug, Clone)]
enum PlanKind {
    Radix2 {
        twiddles: Vec<Complex64>,
    },
    Bluestein {
        inner: Box<FftPlan>,
        inner_inv: Box<FftPlan>,
        chirp: Vec<Complex64>,
        kernel_hat: Vec<Complex64>,
    },
}

impl FftPlan {
    pub fn new(len: usize) -> Self {
        Self::with_direction(len, false)
    }

    fn with_direction(len: usize, inverse: bool) -> Self {
        assert!(len > 0, "FFT length must be positive");
        if len.is_power_of_two() {
            let sign = if inverse { 1.0 } else { -1.0 };
            let twiddles = (0..len / 2)
                .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / len as f64))
                .collect();
            return FftPlan {
                len,
                kind: PlanKind::Radix2 { twiddles },
            };
        }
        assert!(
            !inverse,
            "inverse transforms are only planned for power-of-two sizes"
        );
        let m = (2 * len - 1).next_power_of_two();
        // w_j = exp(-i*pi*j^2/n); j^2 is reduced mod 2n to keep the angle exact
        let chirp: Vec<Complex64> = (0..len)
            .map(|j| {
                let jj = (j as u128 * j as u128 % (2 * len as u128)) as f64;
                Complex64::from_polar(1.0, -PI * jj / len as f64)
            })
            .collect();
        let mut kernel = vec![Complex64::new(0.0, 0.0); m];
        kernel[0] = chirp[0].conj();
        for j in 1..len {
            kernel[j] = chirp[j].conj();
            kernel[m - j] = chirp[j].conj();
        }
        let inner = FftPlan::with_direction(m, false);
        inner.process(&mut kernel);
        FftPlan {
            len,
            kind: PlanKind::Bluestein {
                inner: Box::new(inner),
                inner_inv: Box::new(FftPlan::with_direction(m, true)),
                chirp,
                kernel_hat: kernel,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place unnormalized forward DFT: `X_k = sum_t x_t exp(-2 pi i k t / n)`.
    pub fn process(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.len, "buffer length does not match plan");
        match &self.kind {
            PlanKind::Radix2 { twiddles } => radix2(buf, twiddles),
            PlanKind::Bluestein {
                inner,
                inner_inv,
                chirp,
                kernel_hat,
            } => {
                let m = kernel_hat.len();
                let mut work = vec![Complex64::new(0.0, 0.0); m];
                for ((w, &x), &c) in work.iter_mut().zip(buf.iter()).zip(chirp) {
                    *w = x * c;
                }
                inner.process(&mut work);
                for (w, &k) in work.iter_mut().zip(kernel_hat) {
                    *w *= k;
                }
                inner_inv.process(&mut work);
                let scale = 1.0 / m as f64;
                for ((out, &w), &c) in buf.iter_mut().zip(&work).zip(chirp) {
                    *out = w * c * scale;
                }
            }
        }
    }
}

fn radix2(buf: &mut [Complex64], twiddles: &[Complex64]) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        let step = n / size;
        for start in (0..n).step_by(size) {
            for k in 0..half {
                let t = buf[start + k + half] * twiddles[k * step];
                let u = buf[start + k];
                buf[start + k] = u + t;
                buf[start + k + half] = u - t;
            }
        }
        size *= 2;
    }
}

/// Forward DFT of a real sequence; returns all `n` complex bins.
pub fn fft_real(x: &[f64]) -> Vec<Complex64> {
    let plan = FftPlan::new(x.len());
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan.process(&mut buf);
    buf
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, &v)| {
                        let ang = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                        v * Complex64::from_polar(1.0, ang)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_for_small_lengths() {
        for n in 1..=40 {
            let x: Vec<Complex64> = (0..n)
                .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos()))
                .collect();
            let mut y = x.clone();
            FftPlan::new(n).process(&mut y);
            let want = naive(&x);
            for (a, b) in y.iter().zip(&want) {
                assert!((a - b).norm() < 1e-10, "n={n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn impulse_is_flat() {
        let mut x = vec![Complex64::new(0.0, 0.0); 12];
        x[0] = Complex64::new(1.0, 0.0);
        FftPlan::new(12).process(&mut x);
        for v in x {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }
}
