//! im2col-based 2D convolution and its transpose.

use super::array::Tensor;
use super::gemm::{gemm, MatRef, Precision};
use crate::error::{dim_err, Result};

/// Geometry of a strided, zero-padded cross-correlation from an input
/// plane `c x h x w` to an output plane `oh x ow`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let ncol = g.cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix >= 0 && ix < g.w as isize {
                            src[ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, x: &mut [f64]) {
    let ncol = g.cols();
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let line = &src[oy * g.ow..(oy + 1) * g.ow];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        ref s => dim_err(format!("{what} must be rank 4, got shape {s:?}")),
    }
}

/// Output geometry of `conv2d`; spatial size uses floor division.
pub(crate) fn conv2d_geom(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Result<(usize, ConvGeom)> {
    let [n, c, h, w] = dims4(x, "conv2d input")?;
    let [_, kc, kh, kw] = dims4(k, "conv2d kernel")?;
    if stride == 0 {
        return dim_err("conv2d stride must be positive");
    }
    if kc != c {
        return dim_err(format!("conv2d kernel expects {kc} input channels, input has {c}"));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return dim_err(format!("conv2d kernel must have odd spatial size, got {kh}x{kw}"));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return dim_err(format!(
            "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * pad,
            w + 2 * pad
        ));
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    Ok((
        n,
        ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        },
    ))
}

pub(crate) fn conv2d_forward(
    precision: Precision,
    x: &Tensor,
    k: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (n, g) = conv2d_geom(x, k, stride, pad)?;
    let kout = k.shape()[0];
    let in_len = g.c * g.h * g.w;
    let out_len = kout * g.cols();
    let mut out = vec![0.0; n * out_len];
    let mut cols = vec![0.0; g.rows() * g.cols()];
    let kmat = MatRef::new(k.data(), kout, g.rows());
    for b in 0..n {
        im2col(&x.data()[b * in_len..(b + 1) * in_len], &g, &mut cols);
        gemm(
            precision,
            kmat,
            MatRef::new(&cols, g.rows(), g.cols()),
            0.0,
            &mut out[b * out_len..(b + 1) * out_len],
        );
    }
    Tensor::new(vec![n, kout, g.oh, g.ow], out)
}

/// Returns `(d input, d kernel)`.
pub(crate) fn conv2d_backward(
    precision: Precision,
    x: &Tensor,
    k: &Tensor,
    stride: usize,
    pad: usize,
    gout: &[f64],
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>) {
    let (n, g) = conv2d_geom(x, k, stride, pad).expect("validated in forward");
    let kout = k.shape()[0];
    let in_len = g.c * g.h * g.w;
    let out_len = kout * g.cols();
    let mut dx = if need_dx { vec![0.0; x.len()] } else { Vec::new() };
    let mut dk = vec![0.0; k.len()];
    let mut cols = vec![0.0; g.rows() * g.cols()];
    let mut dcols = vec![0.0; g.rows() * g.cols()];
    let kmat = MatRef::new(k.data(), kout, g.rows());
    for b in 0..n {
        let go = MatRef::new(&gout[b * out_len..(b + 1) * out_len], kout, g.cols());
        im2col(&x.data()[b * in_len..(b + 1) * in_len], &g, &mut cols);
        gemm(precision, go, MatRef::new(&cols, g.rows(), g.cols()).t(), 1.0, &mut dk);
        if need_dx {
            gemm(precision, kmat.t(), go, 0.0, &mut dcols);
            col2im(&dcols, &g, &mut dx[b * in_len..(b + 1) * in_len]);
        }
    }
    (dx, dk)
}

/// Geometry for the transposed convolution: `geom` describes the forward
/// correlation from the (larger) output plane back to the input plane.
pub(crate) fn conv_transpose2d_geom(
    y: &Tensor,
    k: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, ConvGeom)> {
    let [n, kin, hi, wi] = dims4(y, "conv_transpose2d input")?;
    let [kk, c, kh, kw] = dims4(k, "conv_transpose2d kernel")?;
    if stride == 0 {
        return dim_err("conv_transpose2d stride must be positive");
    }
    if kk != kin {
        return dim_err(format!(
            "conv_transpose2d kernel expects {kk} input channels, input has {kin}"
        ));
    }
    let full_h = (hi - 1) * stride + kh;
    let full_w = (wi - 1) * stride + kw;
    if full_h <= 2 * pad || full_w <= 2 * pad {
        return dim_err(format!(
            "conv_transpose2d padding {pad} leaves an empty output for input {hi}x{wi}"
        ));
    }
    Ok((
        n,
        kin,
        ConvGeom {
            c,
            h: full_h - 2 * pad,
            w: full_w - 2 * pad,
            kh,
            kw,
            stride,
            pad,
            oh: hi,
            ow: wi,
        },
    ))
}

pub(crate) fn conv_transpose2d_forward(
    precision: Precision,
    y: &Tensor,
    k: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (n, kin, g) = conv_transpose2d_geom(y, k, stride, pad)?;
    let in_len = kin * g.cols();
    let out_len = g.c * g.h * g.w;
    let mut out = vec![0.0; n * out_len];
    let mut cols = vec![0.0; g.rows() * g.cols()];
    let kmat = MatRef::new(k.data(), kin, g.rows());
    for b in 0..n {
        let yb = MatRef::new(&y.data()[b * in_len..(b + 1) * in_len], kin, g.cols());
        gemm(precision, kmat.t(), yb, 0.0, &mut cols);
        col2im(&cols, &g, &mut out[b * out_len..(b + 1) * out_len]);
    }
    Tensor::new(vec![n, g.c, g.h, g.w], out)
}

/// Returns `(d input, d kernel)`.
pub(crate) fn conv_transpose2d_backward(
    precision: Precision,
    y: &Tensor,
    k: &Tensor,
    stride: usize,
    pad: usize,
    gout: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (n, kin, g) = conv_transpose2d_geom(y, k, stride, pad).expect("validated in forward");
    let in_len = kin * g.cols();
    let out_len = g.c * g.h * g.w;
    let mut dy = vec![0.0; y.len()];
    let mut dk = vec![0.0; k.len()];
    let mut cols = vec![0.0; g.rows() * g.cols()];
    let kmat = MatRef::new(k.data(), kin, g.rows());
    for b in 0..n {
        im2col(&gout[b * out_len..(b + 1) * out_len], &g, &mut cols);
        let cm = MatRef::new(&cols, g.rows(), g.cols());
        gemm(precision, kmat, cm, 0.0, &mut dy[b * in_len..(b + 1) * in_len]);
        let yb = MatRef::new(&y.data()[b * in_len..(b + 1) * in_len], kin, g.cols());
        gemm(precision, yb, cm.t(), 1.0, &mut dk);
    }
    (dy, dk)
}
