//! 2-D convolution in three flavors: standard, pointwise (1x1), and
//! depthwise with a channel multiplier.
//!
//! Conventions shared by all kinds:
//! - "same" zero padding derived from the kernel: 3x3 pads by 1, 1x1 by 0;
//!   output spatial size is floor((H + 2p - k)/s) + 1.
//! - stride is 1 or 2 and applies to both spatial dims;
//! - no bias terms (the networks here always follow convs with batch norm).
//!
//! A depthwise kernel with multiplier m maps input channel `ci` to the m
//! consecutive output channels `ci*m + j`; its weights are stored as
//! `(m*C, 1, k, k)` with row `ci*m + j` holding the j-th kernel for `ci`.
//!
//! Two forward paths exist: [`conv2d_forward_direct`] is the obvious
//! quadruple loop over a zero-padded copy of the input and serves as the
//! reference (and as the instrumented multiply counter); [`conv2d_forward`]
//! is the im2col/GEMM fast path used everywhere else. The two must agree to
//! tight float tolerance and the test suite enforces that.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    Standard,
    Pointwise,
    Depthwise { multiplier: usize },
}

#[derive(Clone, Debug)]
pub struct ConvParams {
    pub kind: ConvKind,
    /// Standard/pointwise: `(out, in, k, k)`. Depthwise: `(m*C, 1, k, k)`.
    pub weights: Tensor,
    pub stride: usize,
}

impl ConvParams {
    pub fn new(kind: ConvKind, weights: Tensor, stride: usize) -> Result<ConvParams> {
        if !matches!(stride, 1 | 2) {
            return Err(Error::Argument(format!("conv stride must be 1 or 2, got {stride}")));
        }
        let (_, _, kh, kw) = weights.shape();
        if kh != kw || !matches!(kh, 1 | 3) {
            return Err(Error::Argument(format!("conv kernel must be 1x1 or 3x3, got {kh}x{kw}")));
        }
        match kind {
            ConvKind::Pointwise if kh != 1 => {
                return Err(Error::Argument("pointwise conv requires a 1x1 kernel".into()))
            }
            ConvKind::Depthwise { multiplier } => {
                if multiplier == 0 {
                    return Err(Error::Argument("depthwise multiplier must be >= 1".into()));
                }
                if weights.c() != 1 {
                    return Err(Error::Shape(format!(
                        "depthwise weights must be (m*C, 1, k, k), got {:?}",
                        weights.shape()
                    )));
                }
                if weights.n() % multiplier != 0 {
                    return Err(Error::Shape(format!(
                        "depthwise weight rows {} not divisible by multiplier {multiplier}",
                        weights.n()
                    )));
                }
            }
            _ => {}
        }
        Ok(ConvParams { kind, weights, stride })
    }

    pub fn kernel(&self) -> usize {
        self.weights.h()
    }

    /// Zero padding on each side ("same" for odd kernels).
    pub fn padding(&self) -> usize {
        (self.kernel() - 1) / 2
    }

    pub fn out_channels(&self) -> usize {
        self.weights.n()
    }

    /// Input channel count implied by the weights.
    pub fn in_channels(&self) -> usize {
        match self.kind {
            ConvKind::Depthwise { multiplier } => self.weights.n() / multiplier,
            _ => self.weights.c(),
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c() != self.in_channels() {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {} (input {:?})",
                self.in_channels(),
                x.c(),
                x.shape()
            )));
        }
        if x.h() == 0 || x.w() == 0 || x.n() == 0 {
            return Err(Error::Shape(format!("conv input has an empty dim: {:?}", x.shape())));
        }
        Ok(())
    }
}

/// Output spatial size for kernel `k`, stride `s`, and "same" padding.
pub fn conv_out_hw(h: usize, w: usize, k: usize, s: usize) -> (usize, usize) {
    let p = (k - 1) / 2;
    ((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1)
}

/// Reference forward: zero-pad, then loop over every output element and
/// every kernel tap. Slow and obviously correct.
pub fn conv2d_forward_direct(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    direct_impl(x, p, None)
}

/// Reference forward that also counts one multiply per kernel tap per output
/// element (padding taps included, matching the analytic cost model).
pub fn conv2d_forward_counted(x: &Tensor, p: &ConvParams, macs: &mut u64) -> Result<Tensor> {
    direct_impl(x, p, Some(macs))
}

fn direct_impl(x: &Tensor, p: &ConvParams, mut macs: Option<&mut u64>) -> Result<Tensor> {
    p.check_input(x)?;
    let (n, c, h, w) = x.shape();
    let k = p.kernel();
    let s = p.stride;
    let pad = p.padding();
    let (oh, ow) = conv_out_hw(h, w, k, s);
    let out_c = p.out_channels();
    let mut y = Tensor::zeros(n, out_c, oh, ow)?;

    // Materialize the zero-padded input so the inner loops have no branches
    // and the instrumented path counts padding taps like the cost model does.
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut xp = Tensor::zeros(n, c, ph, pw)?;
    for ni in 0..n {
        for ci in 0..c {
            for hi in 0..h {
                for wi in 0..w {
                    xp.set(ni, ci, hi + pad, wi + pad, x.get(ni, ci, hi, wi));
                }
            }
        }
    }

    let mut mul_count: u64 = 0;
    for ni in 0..n {
        for co in 0..out_c {
            for ohi in 0..oh {
                for owi in 0..ow {
                    let mut acc = 0.0;
                    match p.kind {
                        ConvKind::Standard | ConvKind::Pointwise => {
                            for ci in 0..c {
                                for kh in 0..k {
                                    for kw in 0..k {
                                        acc += p.weights.get(co, ci, kh, kw)
                                            * xp.get(ni, ci, ohi * s + kh, owi * s + kw);
                                        mul_count += 1;
                                    }
                                }
                            }
                        }
                        ConvKind::Depthwise { multiplier } => {
                            let ci = co / multiplier;
                            for kh in 0..k {
                                for kw in 0..k {
                                    acc += p.weights.get(co, 0, kh, kw)
                                        * xp.get(ni, ci, ohi * s + kh, owi * s + kw);
                                    mul_count += 1;
                                }
                            }
                        }
                    }
                    y.set(ni, co, ohi, owi, acc);
                }
            }
        }
    }
    if let Some(m) = macs.as_deref_mut() {
        *m += mul_count;
    }
    Ok(y)
}

/// Fast forward path. Standard convs go through im2col + GEMM, pointwise
/// through a plain GEMM, depthwise through a tight per-channel loop. Batch
/// items are processed in parallel into disjoint output slices.
pub fn conv2d_forward(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    p.check_input(x)?;
    let (n, _, h, w) = x.shape();
    let k = p.kernel();
    let (oh, ow) = conv_out_hw(h, w, k, p.stride);
    let out_c = p.out_channels();
    let mut y = Tensor::zeros(n, out_c, oh, ow)?;
    let item_len = out_c * oh * ow;
    y.data_mut()
        .par_chunks_mut(item_len)
        .enumerate()
        .for_each(|(ni, out_item)| forward_one(x, p, ni, oh, ow, out_item));
    Ok(y)
}

fn forward_one(x: &Tensor, p: &ConvParams, ni: usize, oh: usize, ow: usize, out: &mut [f64]) {
    let (_, c, h, w) = x.shape();
    let k = p.kernel();
    let s = p.stride;
    let pad = p.padding();
    let plane = oh * ow;
    match p.kind {
        ConvKind::Pointwise if s == 1 => {
            // y = W (O x C) . X (C x HW); both operands already contiguous.
            let xs = &x.data()[x.offset(ni, 0, 0, 0)..x.offset(ni, 0, 0, 0) + c * plane];
            gemm(p.out_channels(), c, plane, p.weights.data(), xs, out);
        }
        ConvKind::Pointwise => {
            // Strided 1x1: gather the sampled grid, then the same GEMM.
            let mut xs = vec![0.0; c * plane];
            for ci in 0..c {
                for ohi in 0..oh {
                    for owi in 0..ow {
                        xs[(ci * oh + ohi) * ow + owi] = x.get(ni, ci, ohi * s, owi * s);
                    }
                }
            }
            gemm(p.out_channels(), c, plane, p.weights.data(), &xs, out);
        }
        ConvKind::Standard => {
            let rows = c * k * k;
            let mut cols = vec![0.0; rows * plane];
            im2col(x, ni, k, s, pad, oh, ow, &mut cols);
            gemm(p.out_channels(), rows, plane, p.weights.data(), &cols, out);
        }
        ConvKind::Depthwise { multiplier } => {
            for co in 0..p.out_channels() {
                let ci = co / multiplier;
                let xplane = x.plane(ni, ci);
                let wbase = co * k * k;
                let wk = &p.weights.data()[wbase..wbase + k * k];
                let orow = &mut out[co * plane..(co + 1) * plane];
                for ohi in 0..oh {
                    for owi in 0..ow {
                        let mut acc = 0.0;
                        for kh in 0..k {
                            let ih = (ohi * s + kh) as isize - pad as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for kw in 0..k {
                                let iw = (owi * s + kw) as isize - pad as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                acc += wk[kh * k + kw] * xplane[ih as usize * w + iw as usize];
                            }
                        }
                        orow[ohi * ow + owi] = acc;
                    }
                }
            }
        }
    }
}

/// Backward pass: returns `(grad_input, grad_weights)`. Convolution is
/// linear, so the original input plus the upstream gradient are exactly the
/// cache needed. Gradients over the batch are accumulated in batch order, so
/// the result does not depend on the parallel schedule.
pub fn conv2d_backward(x: &Tensor, p: &ConvParams, gy: &Tensor) -> Result<(Tensor, Tensor)> {
    p.check_input(x)?;
    let (n, c, h, w) = x.shape();
    let k = p.kernel();
    let s = p.stride;
    let pad = p.padding();
    let (oh, ow) = conv_out_hw(h, w, k, s);
    if gy.shape() != (n, p.out_channels(), oh, ow) {
        return Err(Error::Shape(format!(
            "conv backward expects upstream gradient {:?}, got {:?}",
            (n, p.out_channels(), oh, ow),
            gy.shape()
        )));
    }
    let mut gx = Tensor::zeros(n, c, h, w)?;
    let (wn, wc, _, _) = p.weights.shape();
    let wlen = p.weights.len();
    let plane = oh * ow;
    let out_c = p.out_channels();

    match p.kind {
        ConvKind::Standard | ConvKind::Pointwise => {
            let rows = c * k * k;
            // Per-item partial weight gradients, then a fixed-order sum.
            let gx_item = c * h * w;
            let partials: Vec<Vec<f64>> = gx
                .data_mut()
                .par_chunks_mut(gx_item)
                .enumerate()
                .map(|(ni, gx_slice)| {
                    let mut cols = vec![0.0; rows * plane];
                    im2col(x, ni, k, s, pad, oh, ow, &mut cols);
                    let gy_item = &gy.data()[gy.offset(ni, 0, 0, 0)..gy.offset(ni, 0, 0, 0) + out_c * plane];
                    // gw_n = gy_n (O x P) . cols^T (P x rows)
                    let mut gw_n = vec![0.0; wlen];
                    gemm_nt(out_c, plane, rows, gy_item, &cols, &mut gw_n);
                    // gcols = W^T (rows x O) . gy_n (O x P)
                    let mut gcols = vec![0.0; rows * plane];
                    gemm_tn(rows, out_c, plane, p.weights.data(), gy_item, &mut gcols);
                    col2im(&gcols, k, s, pad, oh, ow, c, h, w, gx_slice);
                    gw_n
                })
                .collect();
            let mut gw = Tensor::zeros(wn, wc, k, k)?;
            for part in &partials {
                for (a, b) in gw.data_mut().iter_mut().zip(part) {
                    *a += b;
                }
            }
            Ok((gx, gw))
        }
        ConvKind::Depthwise { multiplier } => {
            // grad input: every output channel co feeds back into its single
            // source channel ci = co / m. Parallel over batch items.
            let gx_item = c * h * w;
            gx.data_mut().par_chunks_mut(gx_item).enumerate().for_each(|(ni, gx_slice)| {
                for co in 0..out_c {
                    let ci = co / multiplier;
                    let wbase = co * k * k;
                    let wk = &p.weights.data()[wbase..wbase + k * k];
                    let gplane = gy.plane(ni, co);
                    let gx_plane = &mut gx_slice[ci * h * w..(ci + 1) * h * w];
                    for ohi in 0..oh {
                        for owi in 0..ow {
                            let g = gplane[ohi * ow + owi];
                            if g == 0.0 {
                                continue;
                            }
                            for kh in 0..k {
                                let ih = (ohi * s + kh) as isize - pad as isize;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                for kw in 0..k {
                                    let iw = (owi * s + kw) as isize - pad as isize;
                                    if iw < 0 || iw >= w as isize {
                                        continue;
                                    }
                                    gx_plane[ih as usize * w + iw as usize] += wk[kh * k + kw] * g;
                                }
                            }
                        }
                    }
                }
            });
            // grad weights: parallel over kernel rows; batch summed in order.
            let mut gw = Tensor::zeros(wn, 1, k, k)?;
            gw.data_mut().par_chunks_mut(k * k).enumerate().for_each(|(co, gw_row)| {
                let ci = co / multiplier;
                for ni in 0..n {
                    let xplane = x.plane(ni, ci);
                    let gplane = gy.plane(ni, co);
                    for ohi in 0..oh {
                        for owi in 0..ow {
                            let g = gplane[ohi * ow + owi];
                            if g == 0.0 {
                                continue;
                            }
                            for kh in 0..k {
                                let ih = (ohi * s + kh) as isize - pad as isize;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                for kw in 0..k {
                                    let iw = (owi * s + kw) as isize - pad as isize;
                                    if iw < 0 || iw >= w as isize {
                                        continue;
                                    }
                                    gw_row[kh * k + kw] += xplane[ih as usize * w + iw as usize] * g;
                                }
                            }
                        }
                    }
                }
            });
            Ok((gx, gw))
        }
    }
}

/// out (m x n) += a (m x k) . b (k x n), all row-major.
fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
}

/// out (m x n) += a (m x k) . b^T where b is (n x k) row-major.
fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for kk in 0..k {
                acc += arow[kk] * brow[kk];
            }
            orow[j] += acc;
        }
    }
}

/// out (m x n) += a^T . b where a is (k x m) and b is (k x n), row-major.
fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for kk in 0..k {
        let arow = &a[kk * m..(kk + 1) * m];
        let brow = &b[kk * n..(kk + 1) * n];
        for i in 0..m {
            let aki = arow[i];
            if aki == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aki * brow[j];
            }
        }
    }
}

/// Unfold item `ni` of `x` into `cols` with layout `(C*k*k, oh*ow)`; row
/// `(ci*k + kh)*k + kw` matches the standard-conv weight layout so the GEMM
/// needs no reshuffling. Out-of-bounds taps stay zero.
#[allow(clippy::too_many_arguments)]
fn im2col(x: &Tensor, ni: usize, k: usize, s: usize, pad: usize, oh: usize, ow: usize, cols: &mut [f64]) {
    let (_, c, h, w) = x.shape();
    let plane = oh * ow;
    for ci in 0..c {
        let xplane = x.plane(ni, ci);
        for kh in 0..k {
            for kw in 0..k {
                let row = (ci * k + kh) * k + kw;
                let crow = &mut cols[row * plane..(row + 1) * plane];
                for ohi in 0..oh {
                    let ih = (ohi * s + kh) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue; // row stays zero
                    }
                    let xrow = &xplane[ih as usize * w..(ih as usize + 1) * w];
                    for owi in 0..ow {
                        let iw = (owi * s + kw) as isize - pad as isize;
                        if iw >= 0 && iw < w as isize {
                            crow[ohi * ow + owi] = xrow[iw as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Fold gradient columns back onto the input gradient (inverse of im2col,
/// accumulating where patches overlap).
#[allow(clippy::too_many_arguments)]
fn col2im(
    gcols: &[f64],
    k: usize,
    s: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    c: usize,
    h: usize,
    w: usize,
    gx: &mut [f64],
) {
    let plane = oh * ow;
    for ci in 0..c {
        let gx_plane = &mut gx[ci * h * w..(ci + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let row = (ci * k + kh) * k + kw;
                let crow = &gcols[row * plane..(row + 1) * plane];
                for ohi in 0..oh {
                    let ih = (ohi * s + kh) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for owi in 0..ow {
                        let iw = (owi * s + kw) as isize - pad as isize;
                        if iw >= 0 && iw < w as isize {
                            gx_plane[ih as usize * w + iw as usize] += crow[ohi * ow + owi];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{he_normal_init, Rng};

    fn ramp(n: usize, c: usize, h: usize, w: usize) -> Tensor {
        let mut t = Tensor::zeros(n, c, h, w).unwrap();
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = i as f64;
        }
        t
    }

    #[test]
    fn averaging_kernel_on_a_ramp() {
        // 5x5 ramp x[h][w] = 5h + w, single channel, 3x3 kernel of 1/9.
        let x = ramp(1, 1, 5, 5);
        let w = Tensor::from_vec(1, 1, 3, 3, vec![1.0 / 9.0; 9]).unwrap();
        let p = ConvParams::new(ConvKind::Standard, w, 1).unwrap();
        let y = conv2d_forward_direct(&x, &p).unwrap();
        assert_eq!(y.shape(), (1, 1, 5, 5));
        // Interior outputs equal the center value (mean of a symmetric
        // neighborhood of a linear ramp).
        for h in 1..4 {
            for wv in 1..4 {
                let expect = (5 * h + wv) as f64;
                assert!((y.get(0, 0, h, wv) - expect).abs() < 1e-12);
            }
        }
        // Top-left corner only sees the 4 in-bounds taps: (0+1+5+6)/9.
        assert!((y.get(0, 0, 0, 0) - 12.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn pointwise_is_a_channel_mix() {
        let mut x = Tensor::zeros(2, 2, 3, 3).unwrap();
        for n in 0..2 {
            for h in 0..3 {
                for wv in 0..3 {
                    x.set(n, 0, h, wv, 4.0);
                    x.set(n, 1, h, wv, 6.0);
                }
            }
        }
        let w = Tensor::from_vec(1, 2, 1, 1, vec![2.0, -1.0]).unwrap();
        let p = ConvParams::new(ConvKind::Pointwise, w, 1).unwrap();
        let y = conv2d_forward(&x, &p).unwrap();
        assert!(y.data().iter().all(|&v| (v - 2.0).abs() < 1e-12)); // 2*4 - 6
    }

    #[test]
    fn depthwise_multiplier_channel_mapping() {
        // C=2, m=2: output channel order is [c0k0, c0k1, c1k0, c1k1].
        let mut x = Tensor::zeros(1, 2, 2, 2).unwrap();
        for h in 0..2 {
            for wv in 0..2 {
                x.set(0, 0, h, wv, 1.0);
                x.set(0, 1, h, wv, 10.0);
            }
        }
        // Four 1x1 depthwise kernels with distinct scales.
        let w = Tensor::from_vec(4, 1, 1, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = ConvParams::new(ConvKind::Depthwise { multiplier: 2 }, w, 1).unwrap();
        let y = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), (1, 4, 2, 2));
        assert_eq!(y.get(0, 0, 0, 0), 1.0);
        assert_eq!(y.get(0, 1, 0, 0), 2.0);
        assert_eq!(y.get(0, 2, 0, 0), 30.0);
        assert_eq!(y.get(0, 3, 0, 0), 40.0);
    }

    #[test]
    fn stride_two_shapes() {
        assert_eq!(conv_out_hw(32, 32, 3, 2), (16, 16));
        assert_eq!(conv_out_hw(7, 7, 3, 2), (4, 4));
        assert_eq!(conv_out_hw(32, 32, 1, 2), (16, 16));
        assert_eq!(conv_out_hw(224, 224, 3, 2), (112, 112));
    }

    #[test]
    fn fast_path_matches_direct_path() {
        let mut rng = Rng::new(123);
        let cases: Vec<(ConvKind, usize, usize, usize, usize)> = vec![
            // (kind, in_c, out_c, k, stride)
            (ConvKind::Standard, 3, 5, 3, 1),
            (ConvKind::Standard, 4, 2, 3, 2),
            (ConvKind::Pointwise, 6, 4, 1, 1),
            (ConvKind::Pointwise, 5, 3, 1, 2),
            (ConvKind::Depthwise { multiplier: 1 }, 4, 4, 3, 1),
            (ConvKind::Depthwise { multiplier: 3 }, 2, 6, 3, 2),
        ];
        for (kind, cin, cout, k, s) in cases {
            let wshape = match kind {
                ConvKind::Depthwise { .. } => (cout, 1, k, k),
                _ => (cout, cin, k, k),
            };
            let w = he_normal_init(&mut rng, wshape, cin * k * k).unwrap();
            let p = ConvParams::new(kind, w, s).unwrap();
            for hw in [1usize, 4, 7] {
                let x = he_normal_init(&mut rng, (2, cin, hw, hw), 7).unwrap();
                let fast = conv2d_forward(&x, &p).unwrap();
                let slow = conv2d_forward_direct(&x, &p).unwrap();
                assert_eq!(fast.shape(), slow.shape());
                for (a, b) in fast.data().iter().zip(slow.data()) {
                    assert!((a - b).abs() < 1e-10, "kind {:?} hw {}", p.kind, hw);
                }
            }
        }
    }

    #[test]
    fn counted_macs_match_formula() {
        let mut rng = Rng::new(77);
        // standard 3x3: H'*W'*k*k*Cin*Cout per item
        let w = he_normal_init(&mut rng, (5, 3, 3, 3), 27).unwrap();
        let p = ConvParams::new(ConvKind::Standard, w, 2).unwrap();
        let x = he_normal_init(&mut rng, (2, 3, 9, 9), 3).unwrap();
        let mut macs = 0u64;
        let _ = conv2d_forward_counted(&x, &p, &mut macs).unwrap();
        let (oh, ow) = conv_out_hw(9, 9, 3, 2);
        assert_eq!(macs, (2 * oh * ow * 9 * 3 * 5) as u64);
        // depthwise m=2: H'*W'*k*k*(m*C)
        let w = he_normal_init(&mut rng, (6, 1, 3, 3), 9).unwrap();
        let p = ConvParams::new(ConvKind::Depthwise { multiplier: 2 }, w, 1).unwrap();
        let x = he_normal_init(&mut rng, (1, 3, 8, 8), 3).unwrap();
        let mut macs = 0u64;
        let _ = conv2d_forward_counted(&x, &p, &mut macs).unwrap();
        assert_eq!(macs, (8 * 8 * 9 * 6) as u64);
    }

    #[test]
    fn shape_errors() {
        let w = Tensor::zeros(4, 3, 3, 3).unwrap();
        let p = ConvParams::new(ConvKind::Standard, w, 1).unwrap();
        let x = Tensor::zeros(1, 2, 8, 8).unwrap(); // wrong channel count
        assert!(matches!(conv2d_forward(&x, &p), Err(Error::Shape(_))));
        assert!(matches!(
            ConvParams::new(ConvKind::Standard, Tensor::zeros(1, 1, 3, 3).unwrap(), 3),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            ConvParams::new(ConvKind::Pointwise, Tensor::zeros(1, 1, 3, 3).unwrap(), 1),
            Err(Error::Argument(_))
        ));
        // upstream gradient with the wrong spatial size
        let w = Tensor::zeros(2, 2, 1, 1).unwrap();
        let p = ConvParams::new(ConvKind::Pointwise, w, 2).unwrap();
        let x = Tensor::zeros(1, 2, 8, 8).unwrap();
        let bad_gy = Tensor::zeros(1, 2, 8, 8).unwrap();
        assert!(matches!(conv2d_backward(&x, &p, &bad_gy), Err(Error::Shape(_))));
    }
}
