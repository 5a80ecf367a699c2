//! Zero-padded ("same") 2D convolution kernels on NHWC buffers.
//!
//! Kernels are laid out `[k, k, c_in, c_out]` so that the innermost loop of
//! both passes runs over contiguous output channels.

/// Geometry of one same-padded convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl ConvGeometry {
    fn pad(&self) -> isize {
        (self.kernel as isize - 1) / 2
    }

    pub fn input_len(&self) -> usize {
        self.batch * self.height * self.width * self.c_in
    }

    pub fn output_len(&self) -> usize {
        self.batch * self.height * self.width * self.c_out
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel * self.kernel * self.c_in * self.c_out
    }

    /// Every in-bounds `(out_pixel, in_pixel, tap)` triple, as pixel
    /// offsets into the NHWC buffers.
    fn taps(&self) -> Vec<(usize, usize, usize)> {
        let (h, w, k) = (self.height as isize, self.width as isize, self.kernel);
        let pad = self.pad();
        let mut out = Vec::with_capacity(self.batch * self.height * self.width * k * k);
        for b in 0..self.batch {
            let base = b * self.height * self.width;
            for y in 0..h {
                for x in 0..w {
                    let out_px = base + (y * w + x) as usize;
                    for ky in 0..k {
                        let yy = y + ky as isize - pad;
                        if yy < 0 || yy >= h {
                            continue;
                        }
                        for kx in 0..k {
                            let xx = x + kx as isize - pad;
                            if xx < 0 || xx >= w {
                                continue;
                            }
                            out.push((out_px, base + (yy * w + xx) as usize, ky * k + kx));
                        }
                    }
                }
            }
        }
        out
    }
}

/// Runs `$body` through a copy compiled with AVX when the CPU has it. The
/// arithmetic is the same element by element (no fused multiply-add), so
/// both paths give bit-identical results.
macro_rules! dispatch {
    ($(#[$meta:meta])* $name:ident($($arg:ident: $ty:ty),*) -> $ret:ty $body:block) => {
        $(#[$meta])*
        pub fn $name($($arg: $ty),*) -> $ret {
            #[inline(always)]
            fn body($($arg: $ty),*) -> $ret $body

            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx")]
                unsafe fn wide($($arg: $ty),*) -> $ret {
                    body($($arg),*)
                }
                if std::arch::is_x86_feature_detected!("avx") {
                    // SAFETY: the feature was detected at runtime.
                    return unsafe { wide($($arg),*) };
                }
            }
            body($($arg),*)
        }
    };
}

dispatch! {
forward(geo: &ConvGeometry, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let (ci_n, co_n) = (geo.c_in, geo.c_out);
    let mut out = vec![0.0; geo.output_len()];
    for px in out.chunks_exact_mut(co_n) {
        px.copy_from_slice(bias);
    }
    for (o, i, tap) in geo.taps() {
        let src = &input[i * ci_n..(i + 1) * ci_n];
        let dst = &mut out[o * co_n..(o + 1) * co_n];
        let ker = &kernel[tap * ci_n * co_n..(tap + 1) * ci_n * co_n];
        for (ci, &v) in src.iter().enumerate() {
            let row = &ker[ci * co_n..(ci + 1) * co_n];
            for (d, &kv) in dst.iter_mut().zip(row) {
                *d += v * kv;
            }
        }
    }
    out
}
}

dispatch! {
/// Gradients with respect to input, kernel and bias, in that order.
backward(
    geo: &ConvGeometry,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64]
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (ci_n, co_n) = (geo.c_in, geo.c_out);
    let mut grad_in = vec![0.0; geo.input_len()];
    let mut grad_k = vec![0.0; geo.kernel_len()];
    let mut grad_b = vec![0.0; co_n];
    for g in grad_out.chunks_exact(co_n) {
        for (gb, &v) in grad_b.iter_mut().zip(g) {
            *gb += v;
        }
    }
    // kernel transposed to [tap, c_out, c_in] so both inner loops below
    // run over contiguous memory
    let taps = geo.kernel * geo.kernel;
    let mut kernel_t = vec![0.0; kernel.len()];
    for tap in 0..taps {
        let off = tap * ci_n * co_n;
        for ci in 0..ci_n {
            for co in 0..co_n {
                kernel_t[off + co * ci_n + ci] = kernel[off + ci * co_n + co];
            }
        }
    }
    for (o, i, tap) in geo.taps() {
        let g = &grad_out[o * co_n..(o + 1) * co_n];
        let src = &input[i * ci_n..(i + 1) * ci_n];
        let gin = &mut grad_in[i * ci_n..(i + 1) * ci_n];
        let koff = tap * ci_n * co_n;
        for (co, &gv) in g.iter().enumerate() {
            let col = &kernel_t[koff + co * ci_n..koff + (co + 1) * ci_n];
            for (gi, &kv) in gin.iter_mut().zip(col) {
                *gi += kv * gv;
            }
        }
        for (ci, &v) in src.iter().enumerate() {
            let grow = &mut grad_k[koff + ci * co_n..koff + (ci + 1) * co_n];
            for (gk, &gv) in grow.iter_mut().zip(g) {
                *gk += v * gv;
            }
        }
    }
    (grad_in, grad_k, grad_b)
}
}
