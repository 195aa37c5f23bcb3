//! Bilinear sampling kernels: grid sampling, point splatting and resizing.

/// The four bilinear taps around a continuous position `(x, y)` where
/// integer coordinates are sample centers.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Taps {
    pub x0: isize,
    pub y0: isize,
    pub fx: f64,
    pub fy: f64,
}

impl Taps {
    pub fn at(x: f64, y: f64) -> Self {
        let x0 = x.floor();
        let y0 = y.floor();
        Self {
            x0: x0 as isize,
            y0: y0 as isize,
            fx: x - x0,
            fy: y - y0,
        }
    }

    /// `(row, col, weight, d weight / dx, d weight / dy)` for each corner.
    pub fn corners(&self) -> [(isize, isize, f64, f64, f64); 4] {
        let (fx, fy) = (self.fx, self.fy);
        [
            (self.y0, self.x0, (1.0 - fx) * (1.0 - fy), -(1.0 - fy), -(1.0 - fx)),
            (self.y0, self.x0 + 1, fx * (1.0 - fy), 1.0 - fy, -fx),
            (self.y0 + 1, self.x0, (1.0 - fx) * fy, -fy, 1.0 - fx),
            (self.y0 + 1, self.x0 + 1, fx * fy, fy, fx),
        ]
    }
}

#[inline]
fn in_bounds(r: isize, c: isize, h: usize, w: usize) -> bool {
    r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w
}

/// `out[p] = bilinear(src, flow[p])`, zero outside `src`.
/// `flow` holds `(x, y) = (column, row)` pairs.
pub(crate) fn grid_sample_forward(src: &[f64], h: usize, w: usize, flow: &[f64]) -> Vec<f64> {
    flow.chunks_exact(2)
        .map(|f| {
            Taps::at(f[0], f[1])
                .corners()
                .iter()
                .filter(|(r, c, ..)| in_bounds(*r, *c, h, w))
                .map(|&(r, c, wgt, ..)| wgt * src[r as usize * w + c as usize])
                .sum()
        })
        .collect()
}

/// Returns `(d src, d flow)`.
pub(crate) fn grid_sample_backward(
    src: &[f64],
    h: usize,
    w: usize,
    flow: &[f64],
    gout: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut dsrc = vec![0.0; src.len()];
    let mut dflow = vec![0.0; flow.len()];
    for (p, f) in flow.chunks_exact(2).enumerate() {
        let g = gout[p];
        if g == 0.0 {
            continue;
        }
        for (r, c, wgt, dwx, dwy) in Taps::at(f[0], f[1]).corners() {
            if !in_bounds(r, c, h, w) {
                continue;
            }
            let idx = r as usize * w + c as usize;
            dsrc[idx] += g * wgt;
            dflow[2 * p] += g * dwx * src[idx];
            dflow[2 * p + 1] += g * dwy * src[idx];
        }
    }
    (dsrc, dflow)
}

/// Accumulates bilinear weights of every point onto a `side x side` raster.
/// Points are `(u, v)` pairs mapped by `r = scale * u + offset`.
pub(crate) fn splat_forward(points: &[f64], side: usize, scale: f64, offset: f64) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    for p in points.chunks_exact(2) {
        let taps = Taps::at(scale * p[0] + offset, scale * p[1] + offset);
        for (r, c, wgt, ..) in taps.corners() {
            if in_bounds(r, c, side, side) {
                out[r as usize * side + c as usize] += wgt;
            }
        }
    }
    out
}

pub(crate) fn splat_backward(
    points: &[f64],
    side: usize,
    scale: f64,
    offset: f64,
    gout: &[f64],
) -> Vec<f64> {
    let mut dp = vec![0.0; points.len()];
    for (k, p) in points.chunks_exact(2).enumerate() {
        let taps = Taps::at(scale * p[0] + offset, scale * p[1] + offset);
        let (mut gx, mut gy) = (0.0, 0.0);
        for (r, c, _, dwx, dwy) in taps.corners() {
            if in_bounds(r, c, side, side) {
                let g = gout[r as usize * side + c as usize];
                gx += g * dwx;
                gy += g * dwy;
            }
        }
        dp[2 * k] = scale * gx;
        dp[2 * k + 1] = scale * gy;
    }
    dp
}

/// Source index and weight for each output coordinate of an
/// align-corners bilinear resize along one axis.
pub(crate) fn resize_axis(inp: usize, out: usize) -> Vec<(usize, f64)> {
    (0..out)
        .map(|i| {
            if inp == 1 || out == 1 {
                return (0, 0.0);
            }
            let s = i as f64 * (inp - 1) as f64 / (out - 1) as f64;
            let i0 = (s.floor() as usize).min(inp - 2);
            (i0, s - i0 as f64)
        })
        .collect()
}

pub(crate) struct ResizePlan {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
    rows: Vec<(usize, f64)>,
    cols: Vec<(usize, f64)>,
}

impl ResizePlan {
    pub fn new(planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Self {
        Self {
            planes,
            h,
            w,
            oh,
            ow,
            rows: resize_axis(h, oh),
            cols: resize_axis(w, ow),
        }
    }

    // (input offset within plane, weight) for the 4 taps of output (i, j)
    fn taps(&self, i: usize, j: usize) -> [(usize, f64); 4] {
        let (r0, fy) = self.rows[i];
        let (c0, fx) = self.cols[j];
        let r1 = (r0 + 1).min(self.h - 1);
        let c1 = (c0 + 1).min(self.w - 1);
        [
            (r0 * self.w + c0, (1.0 - fy) * (1.0 - fx)),
            (r0 * self.w + c1, (1.0 - fy) * fx),
            (r1 * self.w + c0, fy * (1.0 - fx)),
            (r1 * self.w + c1, fy * fx),
        ]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.planes * self.oh * self.ow];
        for p in 0..self.planes {
            let src = &x[p * self.h * self.w..(p + 1) * self.h * self.w];
            for i in 0..self.oh {
                for j in 0..self.ow {
                    out[(p * self.oh + i) * self.ow + j] =
                        self.taps(i, j).iter().map(|&(o, wgt)| wgt * src[o]).sum();
                }
            }
        }
        out
    }

    pub fn backward(&self, gout: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.planes * self.h * self.w];
        for p in 0..self.planes {
            let dst = &mut dx[p * self.h * self.w..(p + 1) * self.h * self.w];
            for i in 0..self.oh {
                for j in 0..self.ow {
                    let g = gout[(p * self.oh + i) * self.ow + j];
                    for (o, wgt) in self.taps(i, j) {
                        dst[o] += wgt * g;
                    }
                }
            }
        }
        dx
    }
}

/// Normalized `ksize x ksize` Gaussian stencil.
pub(crate) fn gaussian_kernel(sigma: f64, ksize: usize) -> Vec<f64> {
    let r = (ksize / 2) as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
    let mut k: Vec<f64> = (0..ksize * ksize)
        .map(|i| {
            let y = (i / ksize) as f64 - r;
            let x = (i % ksize) as f64 - r;
            norm * (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Channel-wise correlation of `[frames, h, w, ch]` data with a square
/// stencil under replicate padding. `transpose` applies the adjoint.
pub(crate) fn blur_apply(
    x: &[f64],
    dims: (usize, usize, usize, usize),
    kernel: &[f64],
    ksize: usize,
    transpose: bool,
) -> Vec<f64> {
    let (frames, h, w, ch) = dims;
    let r = (ksize / 2) as isize;
    let mut out = vec![0.0; x.len()];
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for f in 0..frames {
        let base = f * h * w * ch;
        for i in 0..h {
            for j in 0..w {
                for a in 0..ksize {
                    let si = clamp(i as isize + a as isize - r, h);
                    for b in 0..ksize {
                        let sj = clamp(j as isize + b as isize - r, w);
                        let wgt = kernel[a * ksize + b];
                        let dst = base + (i * w + j) * ch;
                        let src = base + (si * w + sj) * ch;
                        for c in 0..ch {
                            if transpose {
                                out[src + c] += wgt * x[dst + c];
                            } else {
                                out[dst + c] += wgt * x[src + c];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
