//! Convolution kernels shared by the forward and backward passes.
//!
//! Layout is `[batch, channels, time]`, kernel width 3. Each kernel lowers a fixed-size
//! group of samples to a matrix product over unfolded columns. Groups run in parallel
//! and weight gradients are reduced in group order, so results are identical with and
//! without threads.

use crate::par::{self, Execution};

pub(crate) const KERNEL: usize = 3;

/// Samples per matrix product.
const GROUP: usize = 32;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub pad: usize,
}

impl ConvDims {
    fn exec(&self) -> Execution {
        par::for_work(self.batch * self.c_in * self.c_out * self.t_out * KERNEL)
    }

    fn groups(&self) -> usize {
        self.batch.div_ceil(GROUP)
    }

    fn group_range(&self, g: usize) -> (usize, usize) {
        (g * GROUP, ((g + 1) * GROUP).min(self.batch))
    }

    /// The same convolution seen from its adjoint: input and output roles swapped.
    fn swapped(&self) -> ConvDims {
        ConvDims {
            batch: self.batch,
            c_in: self.c_out,
            c_out: self.c_in,
            t_in: self.t_out,
            t_out: self.t_in,
            pad: self.pad,
        }
    }
}

/// `c = a · b` for `a [m, k]` and `b [k, n]` given by row and column strides, with
/// row-major `c [m, n]`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: isize, csa: isize, b: &[f64], rsb: isize, csb: isize, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the strides address elements inside `a` and `b`, whose lengths are at
    // least m * k and k * n, and `c` is a row-major m x n block.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, 0.0, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Range of output steps `t` for which input step `t + k - pad` exists.
#[inline]
fn valid_span(d: &ConvDims, k: usize) -> (usize, usize) {
    let lo = d.pad.saturating_sub(k);
    let hi = (d.t_in + d.pad).saturating_sub(k).min(d.t_out);
    (lo, hi.max(lo))
}

/// Unfolds samples `b0..b1` into `[c_in * 3, n]` columns, `n = (b1 - b0) * t_out`.
fn im2col(d: &ConvDims, x: &[f64], b0: usize, b1: usize) -> Vec<f64> {
    let n = (b1 - b0) * d.t_out;
    let mut cols = vec![0.0; d.c_in * KERNEL * n];
    for c in 0..d.c_in {
        for k in 0..KERNEL {
            let (lo, hi) = valid_span(d, k);
            let row = &mut cols[(c * KERNEL + k) * n..(c * KERNEL + k + 1) * n];
            for b in b0..b1 {
                let xc = &x[(b * d.c_in + c) * d.t_in..(b * d.c_in + c + 1) * d.t_in];
                let dst = &mut row[(b - b0) * d.t_out..(b - b0 + 1) * d.t_out];
                dst[lo..hi].copy_from_slice(&xc[lo + k - d.pad..hi + k - d.pad]);
            }
        }
    }
    cols
}

/// Adds `[c_in * 3, n]` columns back onto the group's `[b1 - b0, c_in, t_in]` block.
fn col2im_add(d: &ConvDims, cols: &[f64], b0: usize, b1: usize, gx: &mut [f64]) {
    let n = (b1 - b0) * d.t_out;
    for c in 0..d.c_in {
        for k in 0..KERNEL {
            let (lo, hi) = valid_span(d, k);
            let row = &cols[(c * KERNEL + k) * n..(c * KERNEL + k + 1) * n];
            for bl in 0..b1 - b0 {
                let gxc = &mut gx[(bl * d.c_in + c) * d.t_in..(bl * d.c_in + c + 1) * d.t_in];
                let src = &row[bl * d.t_out + lo..bl * d.t_out + hi];
                for (g, v) in gxc[lo + k - d.pad..hi + k - d.pad].iter_mut().zip(src) {
                    *g += v;
                }
            }
        }
    }
}

/// Reorders a group's `[b, c_out, t_out]` output gradient to `[c_out, b * t_out]`.
fn gather_out(d: &ConvDims, gy: &[f64], b0: usize, b1: usize) -> Vec<f64> {
    let n = (b1 - b0) * d.t_out;
    let mut g = vec![0.0; d.c_out * n];
    for b in b0..b1 {
        for o in 0..d.c_out {
            let src = &gy[(b * d.c_out + o) * d.t_out..(b * d.c_out + o + 1) * d.t_out];
            g[o * n + (b - b0) * d.t_out..o * n + (b - b0 + 1) * d.t_out].copy_from_slice(src);
        }
    }
    g
}

/// Cross-correlation: `y[b,o,t] = bias[o] + sum_{c,k} w[o,c,k] x[b,c,t+k-pad]`.
pub(crate) fn conv1d_forward(d: ConvDims, x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; d.batch * d.c_out * d.t_out];
    let kk = d.c_in * KERNEL;
    par::for_each_chunk_mut(d.exec(), &mut y, GROUP * d.c_out * d.t_out, |g, yg| {
        let (b0, b1) = d.group_range(g);
        let n = (b1 - b0) * d.t_out;
        let cols = im2col(&d, x, b0, b1);
        let mut out = vec![0.0; d.c_out * n];
        gemm(d.c_out, kk, n, w, kk as isize, 1, &cols, n as isize, 1, &mut out);
        for bl in 0..b1 - b0 {
            for o in 0..d.c_out {
                let dst = &mut yg[(bl * d.c_out + o) * d.t_out..(bl * d.c_out + o + 1) * d.t_out];
                let src = &out[o * n + bl * d.t_out..o * n + (bl + 1) * d.t_out];
                for (yv, v) in dst.iter_mut().zip(src) {
                    *yv = v + bias[o];
                }
            }
        }
    });
    y
}

pub(crate) fn conv1d_backward_input(d: ConvDims, gy: &[f64], w: &[f64]) -> Vec<f64> {
    let mut gx = vec![0.0; d.batch * d.c_in * d.t_in];
    let kk = d.c_in * KERNEL;
    par::for_each_chunk_mut(d.exec(), &mut gx, GROUP * d.c_in * d.t_in, |g, gxg| {
        let (b0, b1) = d.group_range(g);
        let n = (b1 - b0) * d.t_out;
        let go = gather_out(&d, gy, b0, b1);
        let mut cols = vec![0.0; kk * n];
        gemm(kk, d.c_out, n, w, 1, kk as isize, &go, n as isize, 1, &mut cols);
        col2im_add(&d, &cols, b0, b1, gxg);
    });
    gx
}

/// Returns `(grad_weight, grad_bias)`.
pub(crate) fn conv1d_backward_params(d: ConvDims, gy: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (weight_grad(d, gy, x), bias_grad(d.batch, d.c_out, d.t_out, gy))
}

/// `gw[o,c,k] = sum_{b,t} gy[b,o,t] x[b,c,t+k-pad]`.
fn weight_grad(d: ConvDims, gy: &[f64], x: &[f64]) -> Vec<f64> {
    let kk = d.c_in * KERNEL;
    let partials = par::map_range(d.exec(), d.groups(), |g| {
        let (b0, b1) = d.group_range(g);
        let n = (b1 - b0) * d.t_out;
        let cols = im2col(&d, x, b0, b1);
        let go = gather_out(&d, gy, b0, b1);
        let mut gw = vec![0.0; d.c_out * kk];
        gemm(d.c_out, n, kk, &go, n as isize, 1, &cols, 1, n as isize, &mut gw);
        gw
    });
    reduce(partials, d.c_out * kk)
}

/// Transposed convolution with weight `[c_in, c_out, 3]`:
/// `y[b,o,t+k-pad] += w[c,o,k] x[b,c,t]`, the adjoint of [`conv1d_forward`].
pub(crate) fn conv_t_forward(d: ConvDims, x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut y = conv1d_backward_input(d.swapped(), x, w);
    for (i, v) in y.iter_mut().enumerate() {
        *v += bias[(i / d.t_out) % d.c_out];
    }
    y
}

pub(crate) fn conv_t_backward_input(d: ConvDims, gy: &[f64], w: &[f64]) -> Vec<f64> {
    conv1d_forward(d.swapped(), gy, w, &vec![0.0; d.c_in])
}

pub(crate) fn conv_t_backward_params(d: ConvDims, gy: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (weight_grad(d.swapped(), x, gy), bias_grad(d.batch, d.c_out, d.t_out, gy))
}

fn reduce(partials: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for p in partials {
        for (a, b) in out.iter_mut().zip(p) {
            *a += b;
        }
    }
    out
}

fn bias_grad(batch: usize, c_out: usize, t_out: usize, gy: &[f64]) -> Vec<f64> {
    let mut gb = vec![0.0; c_out];
    for b in 0..batch {
        for (o, g) in gb.iter_mut().enumerate() {
            let start = (b * c_out + o) * t_out;
            *g += gy[start..start + t_out].iter().sum::<f64>();
        }
    }
    gb
}
