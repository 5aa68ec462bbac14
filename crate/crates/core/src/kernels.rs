//! Value-level numeric kernels: convolution, pooling, affine maps,
//! pointwise functions and softmax, together with the adjoint routines the
//! tape uses on the way back.
//!
//! Convolution is cross-correlation (no kernel flip). Positions outside the
//! input read as zero.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Height/width pair used for padding, stride and pooling windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub h: usize,
    pub w: usize,
}

impl Pair {
    pub const fn new(h: usize, w: usize) -> Self {
        Self { h, w }
    }

    pub const fn square(n: usize) -> Self {
        Self { h: n, w: n }
    }
}

/// Geometry of one 2D convolution, shared by forward and backward passes.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k1: usize,
    pub k2: usize,
    pub pad: Pair,
    pub stride: Pair,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeometry {
    pub fn new(
        input: &Tensor,
        kernels: &Tensor,
        bias: &Tensor,
        pad: Pair,
        stride: Pair,
    ) -> Result<Self> {
        let (c_in, h, w) = input.chw("conv2d")?;
        let [c_out, kc, k1, k2] = *kernels.shape() else {
            return Err(shape_err(
                "conv2d",
                format!("kernels must be 4-d, got {:?}", kernels.shape()),
            ));
        };
        if kc != c_in {
            return Err(shape_err(
                "conv2d",
                format!("input has {c_in} channels but kernels expect {kc}"),
            ));
        }
        if bias.shape() != [c_out] {
            return Err(shape_err(
                "conv2d",
                format!(
                    "bias {:?} does not match {c_out} output channels",
                    bias.shape()
                ),
            ));
        }
        if stride.h == 0 || stride.w == 0 {
            return Err(Error::Invalid("conv2d stride must be positive".into()));
        }
        if k1 > h + 2 * pad.h || k2 > w + 2 * pad.w {
            return Err(shape_err(
                "conv2d",
                format!("kernel {k1}×{k2} larger than padded input {h}×{w}"),
            ));
        }
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            k1,
            k2,
            pad,
            stride,
            h_out: (h + 2 * pad.h - k1) / stride.h + 1,
            w_out: (w + 2 * pad.w - k2) / stride.w + 1,
        })
    }

    fn rows(&self) -> usize {
        self.c_in * self.k1 * self.k2
    }

    fn cols(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Range of output columns `ox` for which `ox*stride + kx - pad` lands
    /// inside `0..w`.
    #[inline]
    fn valid_range(
        offset: usize,
        pad: usize,
        stride: usize,
        len: usize,
        out: usize,
    ) -> (usize, usize) {
        // in = o*stride + offset - pad, need 0 <= in < len
        let lo = if offset >= pad {
            0
        } else {
            (pad - offset).div_ceil(stride).min(out)
        };
        let hi = if len + pad <= offset {
            0
        } else {
            ((len + pad - offset - 1) / stride + 1).min(out)
        };
        (lo, hi.max(lo))
    }
}

/// Unfolds the input into a `(C_in·k1·k2) × (H'·W')` patch matrix.
pub(crate) fn im2col(input: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let cols = g.cols();
    let mut out = vec![0.0; g.rows() * cols];
    for ci in 0..g.c_in {
        let plane = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k1 {
            let (oy_lo, oy_hi) = ConvGeometry::valid_range(ky, g.pad.h, g.stride.h, g.h, g.h_out);
            for kx in 0..g.k2 {
                let (ox_lo, ox_hi) =
                    ConvGeometry::valid_range(kx, g.pad.w, g.stride.w, g.w, g.w_out);
                if ox_lo == ox_hi {
                    continue;
                }
                let row = ((ci * g.k1 + ky) * g.k2 + kx) * cols;
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride.h + ky - g.pad.h;
                    let dst = &mut out[row + oy * g.w_out..row + (oy + 1) * g.w_out];
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    if g.stride.w == 1 {
                        let ix0 = ox_lo + kx - g.pad.w;
                        dst[ox_lo..ox_hi].copy_from_slice(&src[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst[ox] = src[ox * g.stride.w + kx - g.pad.w];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Folds a patch-matrix gradient back onto the input, accumulating overlaps.
pub(crate) fn col2im(cols_grad: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let cols = g.cols();
    let mut out = vec![0.0; g.c_in * g.h * g.w];
    for ci in 0..g.c_in {
        let plane = &mut out[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k1 {
            let (oy_lo, oy_hi) = ConvGeometry::valid_range(ky, g.pad.h, g.stride.h, g.h, g.h_out);
            for kx in 0..g.k2 {
                let (ox_lo, ox_hi) =
                    ConvGeometry::valid_range(kx, g.pad.w, g.stride.w, g.w, g.w_out);
                if ox_lo == ox_hi {
                    continue;
                }
                let row = ((ci * g.k1 + ky) * g.k2 + kx) * cols;
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride.h + ky - g.pad.h;
                    let src = &cols_grad[row + oy * g.w_out..row + (oy + 1) * g.w_out];
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    if g.stride.w == 1 {
                        let ix0 = ox_lo + kx - g.pad.w;
                        for (d, s) in dst[ix0..ix0 + (ox_hi - ox_lo)]
                            .iter_mut()
                            .zip(&src[ox_lo..ox_hi])
                        {
                            *d += s;
                        }
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst[ox * g.stride.w + kx - g.pad.w] += src[ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `c[m×n] += a[m×k] · b[k×n]`, all row-major.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c[m×k] += a[m×n] · b[k×n]ᵀ`.
pub(crate) fn gemm_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let b_row = &b[j * n..(j + 1) * n];
            let dot: f64 = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            c[i * k + j] += dot;
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`.
pub(crate) fn gemm_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (j, &aij) in a_row.iter().enumerate() {
            if aij == 0.0 {
                continue;
            }
            let c_row = &mut c[j * n..(j + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aij * bv;
            }
        }
    }
}

/// 2D cross-correlation of a `C_in×H×W` map with `C_out×C_in×k1×k2`
/// kernels plus a per-channel bias.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    pad: Pair,
    stride: Pair,
) -> Result<Tensor> {
    let g = ConvGeometry::new(input, kernels, bias, pad, stride)?;
    Ok(conv2d_with(input, kernels, bias, &g))
}

pub(crate) fn conv2d_with(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    g: &ConvGeometry,
) -> Tensor {
    let p = g.cols();
    let mut out = vec![0.0; g.c_out * p];
    for (co, row) in out.chunks_exact_mut(p).enumerate() {
        row.fill(bias.data()[co]);
    }
    if g.k1 == 1 && g.k2 == 1 && g.pad == Pair::square(0) && g.stride == Pair::square(1) {
        gemm_acc(kernels.data(), input.data(), &mut out, g.c_out, g.c_in, p);
    } else {
        let cols = im2col(input.data(), g);
        gemm_acc(kernels.data(), &cols, &mut out, g.c_out, g.rows(), p);
    }
    Tensor::new(&[g.c_out, g.h_out, g.w_out], out).expect("conv output shape")
}

/// Adjoint of [`conv2d`]: returns gradients for input and kernels (when
/// requested) and for the bias.
pub(crate) fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &[f64],
    g: &ConvGeometry,
    need_input: bool,
    need_kernels: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Vec<f64>) {
    let p = g.cols();
    let rows = g.rows();
    let grad_bias: Vec<f64> = grad_out.chunks_exact(p).map(|r| r.iter().sum()).collect();
    let pointwise =
        g.k1 == 1 && g.k2 == 1 && g.pad == Pair::square(0) && g.stride == Pair::square(1);

    let grad_kernels = need_kernels.then(|| {
        let mut gk = vec![0.0; g.c_out * rows];
        if pointwise {
            gemm_nt_acc(grad_out, input.data(), &mut gk, g.c_out, p, rows);
        } else {
            let cols = im2col(input.data(), g);
            gemm_nt_acc(grad_out, &cols, &mut gk, g.c_out, p, rows);
        }
        gk
    });
    let grad_input = need_input.then(|| {
        let mut gc = vec![0.0; rows * p];
        gemm_tn_acc(kernels.data(), grad_out, &mut gc, g.c_out, rows, p);
        if pointwise {
            gc
        } else {
            col2im(&gc, g)
        }
    });
    (grad_input, grad_kernels, grad_bias)
}

/// Reduction applied inside each pooling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

pub(crate) struct PoolGeometry {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub window: Pair,
    pub stride: Pair,
    pub h_out: usize,
    pub w_out: usize,
}

impl PoolGeometry {
    pub fn new(input: &Tensor, window: Pair, stride: Pair) -> Result<Self> {
        let (c, h, w) = input.chw("pool2d")?;
        if stride.h == 0 || stride.w == 0 || window.h == 0 || window.w == 0 {
            return Err(Error::Invalid(
                "pool2d window and stride must be positive".into(),
            ));
        }
        if window.h > h || window.w > w {
            return Err(shape_err(
                "pool2d",
                format!("window {}×{} larger than input {h}×{w}", window.h, window.w),
            ));
        }
        Ok(Self {
            c,
            h,
            w,
            window,
            stride,
            h_out: (h - window.h) / stride.h + 1,
            w_out: (w - window.w) / stride.w + 1,
        })
    }
}

/// Windowed max or mean per channel. For max pooling also returns the flat
/// input index of each selected maximum (first occurrence wins).
pub(crate) fn pool2d_with(
    input: &Tensor,
    mode: PoolMode,
    g: &PoolGeometry,
) -> (Tensor, Vec<usize>) {
    let src = input.data();
    let n_out = g.c * g.h_out * g.w_out;
    let mut out = Vec::with_capacity(n_out);
    let mut argmax = Vec::with_capacity(if mode == PoolMode::Max { n_out } else { 0 });
    let area = (g.window.h * g.window.w) as f64;
    for c in 0..g.c {
        let base = c * g.h * g.w;
        for oy in 0..g.h_out {
            for ox in 0..g.w_out {
                let (y0, x0) = (oy * g.stride.h, ox * g.stride.w);
                match mode {
                    PoolMode::Max => {
                        let mut best = base + y0 * g.w + x0;
                        for y in y0..y0 + g.window.h {
                            for x in x0..x0 + g.window.w {
                                let idx = base + y * g.w + x;
                                if src[idx] > src[best] {
                                    best = idx;
                                }
                            }
                        }
                        out.push(src[best]);
                        argmax.push(best);
                    }
                    PoolMode::Avg => {
                        let mut acc = 0.0;
                        for y in y0..y0 + g.window.h {
                            let row = base + y * g.w;
                            acc += src[row + x0..row + x0 + g.window.w].iter().sum::<f64>();
                        }
                        out.push(acc / area);
                    }
                }
            }
        }
    }
    let t = Tensor::new(&[g.c, g.h_out, g.w_out], out).expect("pool output shape");
    (t, argmax)
}

pub(crate) fn avg_pool_backward(grad_out: &[f64], g: &PoolGeometry) -> Vec<f64> {
    let mut gi = vec![0.0; g.c * g.h * g.w];
    let area = (g.window.h * g.window.w) as f64;
    let mut k = 0;
    for c in 0..g.c {
        let base = c * g.h * g.w;
        for oy in 0..g.h_out {
            for ox in 0..g.w_out {
                let share = grad_out[k] / area;
                k += 1;
                for y in oy * g.stride.h..oy * g.stride.h + g.window.h {
                    let row = base + y * g.w + ox * g.stride.w;
                    for v in &mut gi[row..row + g.window.w] {
                        *v += share;
                    }
                }
            }
        }
    }
    gi
}

/// Per-channel pooling over spatial windows (no padding).
pub fn pool2d(input: &Tensor, mode: PoolMode, window: Pair, stride: Pair) -> Result<Tensor> {
    let g = PoolGeometry::new(input, window, stride)?;
    Ok(pool2d_with(input, mode, &g).0)
}

/// Mean over all spatial positions: `C×H×W → C`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.chw("global_avg_pool")?;
    let area = (h * w) as f64;
    let data = input
        .data()
        .chunks_exact(h * w)
        .map(|plane| plane.iter().sum::<f64>() / area)
        .collect();
    Tensor::new(&[c], data)
}

/// `weight · input + bias` for a vector input.
pub fn affine(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (d_out, d_in) = affine_dims(input, weight, bias)?;
    let mut out = bias.data().to_vec();
    gemm_acc(weight.data(), input.data(), &mut out, d_out, d_in, 1);
    Tensor::new(&[d_out], out)
}

pub(crate) fn affine_dims(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
) -> Result<(usize, usize)> {
    let [d_out, d_in] = *weight.shape() else {
        return Err(shape_err(
            "affine",
            format!("weight must be 2-d, got {:?}", weight.shape()),
        ));
    };
    if input.shape() != [d_in] {
        return Err(shape_err(
            "affine",
            format!(
                "input {:?} does not match weight {:?}",
                input.shape(),
                weight.shape()
            ),
        ));
    }
    if bias.shape() != [d_out] {
        return Err(shape_err(
            "affine",
            format!(
                "bias {:?} does not match weight {:?}",
                bias.shape(),
                weight.shape()
            ),
        ));
    }
    Ok((d_out, d_in))
}

/// Pointwise operations. Binary variants require identical shapes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Hadamard,
    Sigmoid,
    Tanh,
    Relu,
    Scale(f64),
    OneMinus,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Applies a pointwise operation to one or two operands.
pub fn elementwise(op: Elementwise, operands: &[&Tensor]) -> Result<Tensor> {
    let a = operands
        .first()
        .ok_or_else(|| Error::Invalid("elementwise needs an operand".into()))?;
    let binary = matches!(
        op,
        Elementwise::Add | Elementwise::Sub | Elementwise::Hadamard
    );
    let expected = if binary { 2 } else { 1 };
    if operands.len() != expected {
        return Err(Error::Invalid(format!(
            "{op:?} takes {expected} operand(s), got {}",
            operands.len()
        )));
    }
    if binary {
        let b = operands[1];
        if a.shape() != b.shape() {
            return Err(shape_err(
                "elementwise",
                format!("{:?} vs {:?}", a.shape(), b.shape()),
            ));
        }
        let f = match op {
            Elementwise::Add => |x: f64, y: f64| x + y,
            Elementwise::Sub => |x: f64, y: f64| x - y,
            _ => |x: f64, y: f64| x * y,
        };
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::new(a.shape(), data);
    }
    Ok(match op {
        Elementwise::Sigmoid => a.map(sigmoid),
        Elementwise::Tanh => a.map(libm::tanh),
        Elementwise::Relu => a.map(|x| x.max(0.0)),
        Elementwise::Scale(s) => a.map(|x| s * x),
        Elementwise::OneMinus => a.map(|x| 1.0 - x),
        _ => unreachable!(),
    })
}

/// Numerically stable softmax over a vector.
pub fn softmax(input: &Tensor) -> Tensor {
    let max = input
        .data()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = input.data().iter().map(|&v| libm::exp(v - max)).collect();
    let total: f64 = exps.iter().sum();
    Tensor::new(input.shape(), exps.into_iter().map(|e| e / total).collect())
        .expect("softmax keeps shape")
}

/// Concatenates `C_i×H×W` maps (or vectors) along the leading axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or(Error::EmptySequence("concat"))?;
    let tail = &first.shape()[1..];
    let mut lead = 0;
    let mut data = Vec::new();
    for p in parts {
        if &p.shape()[1..] != tail {
            return Err(shape_err(
                "concat",
                format!("{:?} vs {:?}", p.shape(), first.shape()),
            ));
        }
        lead += p.shape()[0];
        data.extend_from_slice(p.data());
    }
    let mut shape = vec![lead];
    shape.extend_from_slice(tail);
    Tensor::new(&shape, data)
}
