//! Inner numeric kernels: matrix-vector products and 2D (de)convolution.
//!
//! Every kernel has a sequential implementation in [`seq`]. With the
//! `parallel` feature (default) the dispatchers at the top of this module
//! split the work across rayon threads when it is large enough to pay for
//! itself; each output element is written by exactly one task, so results
//! are bitwise identical to the sequential path.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Work threshold (multiply-adds) below which parallel dispatch is not worth
/// the fork-join overhead.
pub const PAR_THRESHOLD: usize = 1 << 16;

/// y = M x, M is rows x cols row-major, x has cols elements.
pub fn matvec(m: &[f64], x: &[f64], rows: usize, cols: usize, y: &mut [f64]) {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(y.len(), rows);
    #[cfg(feature = "parallel")]
    if rows * cols >= PAR_THRESHOLD {
        y.par_iter_mut()
            .zip(m.par_chunks_exact(cols))
            .for_each(|(yi, row)| *yi = seq::dot(row, x));
        return;
    }
    seq::matvec(m, x, rows, cols, y);
}

/// g_x = M^T g_y (backward of matvec w.r.t. x).
pub fn matvec_bwd_x(m: &[f64], gy: &[f64], rows: usize, cols: usize, gx: &mut [f64]) {
    #[cfg(feature = "parallel")]
    if rows * cols >= PAR_THRESHOLD {
        gx.par_iter_mut().enumerate().for_each(|(j, gxj)| {
            let mut acc = 0.0;
            for i in 0..rows {
                acc += m[i * cols + j] * gy[i];
            }
            *gxj += acc;
        });
        return;
    }
    seq::matvec_bwd_x(m, gy, rows, cols, gx);
}

/// g_M += g_y x^T (backward of matvec w.r.t. M).
pub fn matvec_bwd_m(gy: &[f64], x: &[f64], rows: usize, cols: usize, gm: &mut [f64]) {
    #[cfg(feature = "parallel")]
    if rows * cols >= PAR_THRESHOLD {
        gm.par_chunks_exact_mut(cols)
            .zip(gy.par_iter())
            .for_each(|(grow, &g)| {
                for (gij, xj) in grow.iter_mut().zip(x) {
                    *gij += g * xj;
                }
            });
        return;
    }
    seq::matvec_bwd_m(gy, x, rows, cols, gm);
}

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub filters: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        (self.in_h - self.k) / self.stride + 1
    }
    pub fn out_w(&self) -> usize {
        (self.in_w - self.k) / self.stride + 1
    }
    /// Output spatial size of the transposed convolution with these params.
    pub fn deconv_out_h(&self) -> usize {
        (self.in_h - 1) * self.stride + self.k
    }
    pub fn deconv_out_w(&self) -> usize {
        (self.in_w - 1) * self.stride + self.k
    }
    #[cfg_attr(not(feature = "parallel"), allow(dead_code))]
    fn fwd_work(&self) -> usize {
        self.filters * self.out_h() * self.out_w() * self.in_c * self.k * self.k
    }
}

/// Valid convolution: x is C x H x W, k is F x C x kH x kW, output F x oH x oW.
pub fn conv_fwd(x: &[f64], kern: &[f64], d: ConvDims, y: &mut [f64]) {
    let (oh, ow) = (d.out_h(), d.out_w());
    debug_assert_eq!(y.len(), d.filters * oh * ow);
    #[cfg(feature = "parallel")]
    if d.fwd_work() >= PAR_THRESHOLD {
        y.par_chunks_exact_mut(oh * ow)
            .enumerate()
            .for_each(|(f, yf)| seq::conv_fwd_one_filter(x, kern, d, f, yf));
        return;
    }
    seq::conv_fwd(x, kern, d, y);
}

/// Scatters gy (F x oH x oW under `d`) back through the kernel into
/// gx (C x H x W). This is both the conv input-gradient and the forward pass
/// of the transposed convolution. Accumulates into gx.
pub fn conv_bwd_input(gy: &[f64], kern: &[f64], d: ConvDims, gx: &mut [f64]) {
    #[cfg(feature = "parallel")]
    if d.fwd_work() >= PAR_THRESHOLD {
        let plane = d.in_h * d.in_w;
        gx.par_chunks_exact_mut(plane)
            .enumerate()
            .for_each(|(c, gxc)| seq::conv_bwd_input_one_channel(gy, kern, d, c, gxc));
        return;
    }
    seq::conv_bwd_input(gy, kern, d, gx);
}

/// Kernel gradient: gk[f,c,ki,kj] += sum over output positions of
/// x[c, oi*s+ki, oj*s+kj] * gy[f, oi, oj]. Accumulates into gk.
pub fn conv_bwd_kernel(x: &[f64], gy: &[f64], d: ConvDims, gk: &mut [f64]) {
    #[cfg(feature = "parallel")]
    if d.fwd_work() >= PAR_THRESHOLD {
        let per_filter = d.in_c * d.k * d.k;
        gk.par_chunks_exact_mut(per_filter)
            .enumerate()
            .for_each(|(f, gkf)| seq::conv_bwd_kernel_one_filter(x, gy, d, f, gkf));
        return;
    }
    seq::conv_bwd_kernel(x, gy, d, gk);
}

pub mod seq {
    //! Sequential reference kernels; always compiled, used directly by the
    //! benches and as the fallback when the `parallel` feature is off.

    use super::ConvDims;

    #[inline]
    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    pub fn matvec(m: &[f64], x: &[f64], rows: usize, cols: usize, y: &mut [f64]) {
        for (yi, row) in y.iter_mut().zip(m.chunks_exact(cols)) {
            *yi = dot(row, x);
        }
        let _ = rows;
    }

    pub fn matvec_bwd_x(m: &[f64], gy: &[f64], _rows: usize, cols: usize, gx: &mut [f64]) {
        for (row, &g) in m.chunks_exact(cols).zip(gy) {
            for (gxj, mij) in gx.iter_mut().zip(row) {
                *gxj += g * mij;
            }
        }
    }

    pub fn matvec_bwd_m(gy: &[f64], x: &[f64], _rows: usize, cols: usize, gm: &mut [f64]) {
        for (grow, &g) in gm.chunks_exact_mut(cols).zip(gy) {
            for (gij, xj) in grow.iter_mut().zip(x) {
                *gij += g * xj;
            }
        }
    }

    pub(super) fn conv_fwd_one_filter(x: &[f64], kern: &[f64], d: ConvDims, f: usize, yf: &mut [f64]) {
        let (oh, ow) = (d.out_h(), d.out_w());
        let kf = &kern[f * d.in_c * d.k * d.k..(f + 1) * d.in_c * d.k * d.k];
        for oi in 0..oh {
            for oj in 0..ow {
                let mut acc = 0.0;
                for c in 0..d.in_c {
                    let xc = &x[c * d.in_h * d.in_w..];
                    let kc = &kf[c * d.k * d.k..];
                    for ki in 0..d.k {
                        let xrow = &xc[(oi * d.stride + ki) * d.in_w + oj * d.stride..];
                        let krow = &kc[ki * d.k..ki * d.k + d.k];
                        acc += dot(&xrow[..d.k], krow);
                    }
                }
                yf[oi * ow + oj] = acc;
            }
        }
    }

    pub fn conv_fwd(x: &[f64], kern: &[f64], d: ConvDims, y: &mut [f64]) {
        let plane = d.out_h() * d.out_w();
        for (f, yf) in y.chunks_exact_mut(plane).enumerate() {
            conv_fwd_one_filter(x, kern, d, f, yf);
        }
    }

    pub(super) fn conv_bwd_input_one_channel(
        gy: &[f64],
        kern: &[f64],
        d: ConvDims,
        c: usize,
        gxc: &mut [f64],
    ) {
        let (oh, ow) = (d.out_h(), d.out_w());
        for f in 0..d.filters {
            let gyf = &gy[f * oh * ow..];
            let kc = &kern[(f * d.in_c + c) * d.k * d.k..];
            for oi in 0..oh {
                for oj in 0..ow {
                    let g = gyf[oi * ow + oj];
                    if g == 0.0 {
                        continue;
                    }
                    for ki in 0..d.k {
                        let base = (oi * d.stride + ki) * d.in_w + oj * d.stride;
                        for kj in 0..d.k {
                            gxc[base + kj] += g * kc[ki * d.k + kj];
                        }
                    }
                }
            }
        }
    }

    pub fn conv_bwd_input(gy: &[f64], kern: &[f64], d: ConvDims, gx: &mut [f64]) {
        let plane = d.in_h * d.in_w;
        for (c, gxc) in gx.chunks_exact_mut(plane).enumerate() {
            conv_bwd_input_one_channel(gy, kern, d, c, gxc);
        }
    }

    pub(super) fn conv_bwd_kernel_one_filter(
        x: &[f64],
        gy: &[f64],
        d: ConvDims,
        f: usize,
        gkf: &mut [f64],
    ) {
        let (oh, ow) = (d.out_h(), d.out_w());
        let gyf = &gy[f * oh * ow..];
        for oi in 0..oh {
            for oj in 0..ow {
                let g = gyf[oi * ow + oj];
                if g == 0.0 {
                    continue;
                }
                for c in 0..d.in_c {
                    let xc = &x[c * d.in_h * d.in_w..];
                    let gkc = &mut gkf[c * d.k * d.k..(c + 1) * d.k * d.k];
                    for ki in 0..d.k {
                        let base = (oi * d.stride + ki) * d.in_w + oj * d.stride;
                        for kj in 0..d.k {
                            gkc[ki * d.k + kj] += g * xc[base + kj];
                        }
                    }
                }
            }
        }
    }

    pub fn conv_bwd_kernel(x: &[f64], gy: &[f64], d: ConvDims, gk: &mut [f64]) {
        let per_filter = d.in_c * d.k * d.k;
        for (f, gkf) in gk.chunks_exact_mut(per_filter).enumerate() {
            conv_bwd_kernel_one_filter(x, gy, d, f, gkf);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn conv_output_shape_matches_paper_arithmetic() {
        // 84x84 input, 8x8 kernel, stride 4 -> 20x20
        let d = ConvDims { in_c: 3, in_h: 84, in_w: 84, filters: 16, k: 8, stride: 4 };
        assert_eq!((d.out_h(), d.out_w()), (20, 20));
        // 9x9 input, 4x4 kernel, stride 2 transposed -> 20x20
        let d2 = ConvDims { in_c: 1, in_h: 9, in_w: 9, filters: 32, k: 4, stride: 2 };
        assert_eq!((d2.deconv_out_h(), d2.deconv_out_w()), (20, 20));
    }

    #[test]
    fn parallel_dispatch_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = ConvDims { in_c: 4, in_h: 40, in_w: 40, filters: 24, k: 5, stride: 1 };
        let x = rand_vec(&mut rng, d.in_c * d.in_h * d.in_w);
        let kern = rand_vec(&mut rng, d.filters * d.in_c * d.k * d.k);
        assert!(d.fwd_work() >= PAR_THRESHOLD, "test must exercise the parallel path");

        let mut y_par = vec![0.0; d.filters * d.out_h() * d.out_w()];
        let mut y_seq = y_par.clone();
        conv_fwd(&x, &kern, d, &mut y_par);
        seq::conv_fwd(&x, &kern, d, &mut y_seq);
        assert_eq!(y_par, y_seq);

        let gy = rand_vec(&mut rng, y_par.len());
        let mut gx_par = vec![0.0; x.len()];
        let mut gx_seq = vec![0.0; x.len()];
        conv_bwd_input(&gy, &kern, d, &mut gx_par);
        seq::conv_bwd_input(&gy, &kern, d, &mut gx_seq);
        assert_eq!(gx_par, gx_seq);

        let mut gk_par = vec![0.0; kern.len()];
        let mut gk_seq = vec![0.0; kern.len()];
        conv_bwd_kernel(&x, &gy, d, &mut gk_par);
        seq::conv_bwd_kernel(&x, &gy, d, &mut gk_seq);
        assert_eq!(gk_par, gk_seq);
    }

    #[test]
    fn matvec_parallel_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (rows, cols) = (300, 400);
        let m = rand_vec(&mut rng, rows * cols);
        let x = rand_vec(&mut rng, cols);
        let mut y_par = vec![0.0; rows];
        let mut y_seq = vec![0.0; rows];
        matvec(&m, &x, rows, cols, &mut y_par);
        seq::matvec(&m, &x, rows, cols, &mut y_seq);
        assert_eq!(y_par, y_seq);
    }

    #[test]
    fn conv_adjoint_inner_product_identity() {
        // <conv(a), b> == <a, deconv(b)> with the same kernel.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let d = ConvDims {
                in_c: rng.gen_range(1..3),
                in_h: rng.gen_range(6..12),
                in_w: rng.gen_range(6..12),
                filters: rng.gen_range(1..4),
                k: rng.gen_range(2..4),
                stride: rng.gen_range(1..3),
            };
            let a = rand_vec(&mut rng, d.in_c * d.in_h * d.in_w);
            let kern = rand_vec(&mut rng, d.filters * d.in_c * d.k * d.k);
            let out_len = d.filters * d.out_h() * d.out_w();
            let b = rand_vec(&mut rng, out_len);

            let mut conv_a = vec![0.0; out_len];
            conv_fwd(&a, &kern, d, &mut conv_a);
            let mut deconv_b = vec![0.0; a.len()];
            conv_bwd_input(&b, &kern, d, &mut deconv_b);

            let lhs = seq::dot(&conv_a, &b);
            let rhs = seq::dot(&a, &deconv_b);
            assert!((lhs - rhs).abs() < 1e-10, "adjoint identity violated: {lhs} vs {rhs}");
        }
    }
}
