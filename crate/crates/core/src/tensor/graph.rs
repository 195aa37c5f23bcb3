//! Recorded computation graph with reverse-mode differentiation.

use super::array::Tensor;
use super::conv;
use super::gemm::Precision;
use super::sample::{self, ResizePlan};
use crate::error::{dim_err, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { x: Var, k: Var, stride: usize, pad: usize },
    ConvTranspose2d { x: Var, k: Var, stride: usize, pad: usize },
    ChannelBias { x: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    MulScalar { x: Var, c: f64 },
    AddScalar { x: Var },
    Relu { x: Var },
    Tanh { x: Var },
    Sum { x: Var },
    Reshape { x: Var },
    WeightedSum { x: Var, w: Vec<f64> },
    NormSq { x: Var },
    Norm { x: Var },
    Select { x: Var, index: usize },
    GridSample { src: Var, flow: Var },
    TranslationFlow { p: Var },
    Blur { x: Var, kernel: Vec<f64>, ksize: usize, dims: (usize, usize, usize, usize) },
    Resize { x: Var, oh: usize, ow: usize },
    ChannelsLast { x: Var },
    Perspective { p: Var, fx: f64, fy: f64 },
    Orthographic { p: Var, scale: f64 },
    Splat { p: Var, side: usize, scale: f64, offset: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// A tape of tensor operations in execution order.
///
/// Nodes are appended as operations run, so index order is a valid
/// topological order and backward simply walks the tape in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    precision: Precision,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_precision(precision: Precision) -> Self {
        Self {
            nodes: Vec::new(),
            precision,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`Graph::backward`]; zeros when
    /// `v` did not contribute to the loss.
    pub fn grad(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        match &node.grad {
            Some(g) => Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(node.value.shape()),
        }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, x: Var, value: Tensor, op: Op) -> Var {
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, rg, op)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor, op: Op) -> Var {
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        self.push(value, rg, op)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return dim_err(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = conv::conv2d_forward(self.precision, self.value(x), self.value(k), stride, pad)?;
        Ok(self.binary(x, k, out, Op::Conv2d { x, k, stride, pad }))
    }

    pub fn conv_transpose2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let out =
            conv::conv_transpose2d_forward(self.precision, self.value(x), self.value(k), stride, pad)?;
        Ok(self.binary(x, k, out, Op::ConvTranspose2d { x, k, stride, pad }))
    }

    /// Adds `b[c]` to every element of channel `c` of an `[N, C, ...]` tensor.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() < 2 || self.value(b).len() != xs[1] {
            return dim_err(format!(
                "channel bias of {} entries for tensor {:?}",
                self.value(b).len(),
                xs
            ));
        }
        let (c, inner) = (xs[1], xs[2..].iter().product::<usize>());
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += bias[(i / inner) % c];
        }
        Ok(self.binary(x, b, out, Op::ChannelBias { x, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o += v;
        }
        Ok(self.binary(a, b, out, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o -= v;
        }
        Ok(self.binary(a, b, out, Op::Sub { a, b }))
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.unary(x, out, Op::MulScalar { x, c })
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.unary(x, out, Op::AddScalar { x })
    }

    /// Elementwise `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.unary(x, out, Op::Relu { x })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.unary(x, out, Op::Tanh { x })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.unary(x, Tensor::scalar(s), Op::Sum { x })
    }

    /// `sum_i x_i * w_i` against constant weights of the same shape.
    pub fn weighted_sum(&mut self, x: Var, w: &Tensor) -> Result<Var> {
        if self.shape(x) != w.shape() {
            return dim_err(format!(
                "weighted_sum: shapes {:?} and {:?} differ",
                self.shape(x),
                w.shape()
            ));
        }
        let s = self.value(x).dot(w);
        let w = w.data().to_vec();
        Ok(self.unary(x, Tensor::scalar(s), Op::WeightedSum { x, w }))
    }

    pub fn frobenius_norm_sq(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        self.unary(x, Tensor::scalar(s), Op::NormSq { x })
    }

    /// Square root of the sum of squares; gradient at exact zero is zero.
    pub fn frobenius_norm(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v * v).sum();
        self.unary(x, Tensor::scalar(s.sqrt()), Op::Norm { x })
    }

    /// Same data viewed under a new shape with equal element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.unary(x, out, Op::Reshape { x }))
    }

    /// Slice `index` along the leading axis.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || index >= shape[0] {
            return dim_err(format!("select {index} from shape {shape:?}"));
        }
        let inner: usize = shape[1..].iter().product();
        let data = self.value(x).data()[index * inner..(index + 1) * inner].to_vec();
        let out = Tensor::new(shape[1..].to_vec(), data)?;
        Ok(self.unary(x, out, Op::Select { x, index }))
    }

    /// Samples `source [H, W]` bilinearly at `flow [H', W', 2]` positions,
    /// each `(column, row)`; out-of-range taps read zero.
    pub fn grid_sample_bilinear(&mut self, source: Var, flow: Var) -> Result<Var> {
        let (ss, fs) = (self.shape(source).to_vec(), self.shape(flow).to_vec());
        if ss.len() != 2 || fs.len() != 3 || fs[2] != 2 {
            return dim_err(format!(
                "grid_sample expects [H, W] source and [H', W', 2] flow, got {ss:?} and {fs:?}"
            ));
        }
        let data = sample::grid_sample_forward(
            self.value(source).data(),
            ss[0],
            ss[1],
            self.value(flow).data(),
        );
        let out = Tensor::new(vec![fs[0], fs[1]], data)?;
        Ok(self.binary(source, flow, out, Op::GridSample { src: source, flow }))
    }

    /// Flow field `[side, side, 2]` that translates a centered delta image
    /// onto the raster position `p = (x, y)`.
    pub fn translation_flow(&mut self, p: Var, side: usize) -> Result<Var> {
        if self.value(p).len() != 2 {
            return dim_err(format!("translation_flow needs a 2-vector, got {:?}", self.shape(p)));
        }
        let (px, py) = (self.value(p).data()[0], self.value(p).data()[1]);
        let c = (side as f64 - 1.0) / 2.0;
        let mut data = Vec::with_capacity(side * side * 2);
        for i in 0..side {
            for j in 0..side {
                data.push(j as f64 - px + c);
                data.push(i as f64 - py + c);
            }
        }
        let out = Tensor::new(vec![side, side, 2], data)?;
        Ok(self.unary(p, out, Op::TranslationFlow { p }))
    }

    /// Gaussian smoothing of `[..., H, W, C]` data, channel-wise, with
    /// replicate padding and a kernel normalized to unit sum.
    pub fn gaussian_blur2d(&mut self, x: Var, sigma: f64, ksize: usize) -> Result<Var> {
        if ksize % 2 == 0 {
            return Err(Error::Parameter(format!("blur kernel size must be odd, got {ksize}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Parameter(format!("blur sigma must be positive, got {sigma}")));
        }
        let s = self.shape(x).to_vec();
        if s.len() < 3 {
            return dim_err(format!("blur expects [..., H, W, C], got {s:?}"));
        }
        let r = s.len();
        let dims = (s[..r - 3].iter().product(), s[r - 3], s[r - 2], s[r - 1]);
        let kernel = sample::gaussian_kernel(sigma, ksize);
        let data = sample::blur_apply(self.value(x).data(), dims, &kernel, ksize, false);
        let out = Tensor::new(s, data)?;
        Ok(self.unary(x, out, Op::Blur { x, kernel, ksize, dims }))
    }

    /// Align-corners bilinear resize of `[N, C, H, W]` to `[N, C, oh, ow]`.
    pub fn resize_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || oh == 0 || ow == 0 {
            return dim_err(format!("resize expects [N, C, H, W] and a positive size, got {s:?}"));
        }
        let plan = ResizePlan::new(s[0] * s[1], s[2], s[3], oh, ow);
        let out = Tensor::new(vec![s[0], s[1], oh, ow], plan.forward(self.value(x).data()))?;
        Ok(self.unary(x, out, Op::Resize { x, oh, ow }))
    }

    /// `[N, C, H, W]` to `[N, H, W, C]`.
    pub fn channels_last(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let [n, c, h, w] = s[..] else {
            return dim_err(format!("channels_last expects rank 4, got {s:?}"));
        };
        let src = self.value(x).data();
        let mut data = vec![0.0; src.len()];
        for b in 0..n {
            for ch in 0..c {
                for p in 0..h * w {
                    data[(b * h * w + p) * c + ch] = src[(b * c + ch) * h * w + p];
                }
            }
        }
        let out = Tensor::new(vec![n, h, w, c], data)?;
        Ok(self.unary(x, out, Op::ChannelsLast { x }))
    }

    /// Pinhole projection of `[..., 3]` points to `[..., 2]` pixels.
    pub fn project_perspective(&mut self, p: Var, fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Var> {
        let s = self.shape(p).to_vec();
        if s.last() != Some(&3) {
            return dim_err(format!("projection expects [..., 3], got {s:?}"));
        }
        let src = self.value(p).data();
        let mut data = Vec::with_capacity(src.len() / 3 * 2);
        for (i, q) in src.chunks_exact(3).enumerate() {
            if !(q[2] > 0.0) {
                return Err(Error::DegenerateDepth { index: i, z: q[2] });
            }
            data.push(fx * q[0] / q[2] + cx);
            data.push(fy * q[1] / q[2] + cy);
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = 2;
        let out = Tensor::new(shape, data)?;
        Ok(self.unary(p, out, Op::Perspective { p, fx, fy }))
    }

    pub fn project_orthographic(&mut self, p: Var, scale: f64, cx: f64, cy: f64) -> Result<Var> {
        let s = self.shape(p).to_vec();
        if s.last() != Some(&3) {
            return dim_err(format!("projection expects [..., 3], got {s:?}"));
        }
        let data: Vec<f64> = self
            .value(p)
            .data()
            .chunks_exact(3)
            .flat_map(|q| [scale * q[0] + cx, scale * q[1] + cy])
            .collect();
        let mut shape = s;
        *shape.last_mut().unwrap() = 2;
        let out = Tensor::new(shape, data)?;
        Ok(self.unary(p, out, Op::Orthographic { p, scale }))
    }

    /// Sums the bilinear footprints of `[..., 2]` points on a `side x side`
    /// raster after mapping each coordinate through `scale * u + offset`.
    pub fn splat_bilinear(&mut self, p: Var, side: usize, scale: f64, offset: f64) -> Result<Var> {
        let s = self.shape(p).to_vec();
        if s.last() != Some(&2) || side == 0 {
            return dim_err(format!("splat expects [..., 2] points, got {s:?}"));
        }
        let data = sample::splat_forward(self.value(p).data(), side, scale, offset);
        let out = Tensor::new(vec![side, side], data)?;
        Ok(self.unary(p, out, Op::Splat { p, side, scale, offset }))
    }

    /// Reverse pass from a scalar `loss`. Gradients from a previous pass
    /// are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad || matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(idx, &g);
            self.nodes[idx].grad = Some(g);
            for (v, dv) in contributions {
                let node = &mut self.nodes[v.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&dv).for_each(|(a, d)| *a += d),
                    None => node.grad = Some(dv),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match node.op {
            Op::Leaf => vec![],
            Op::Conv2d { x, k, stride, pad } => {
                let (dx, dk) =
                    conv::conv2d_backward(self.precision, val(x), val(k), stride, pad, g, rg(x));
                vec![(x, dx), (k, dk)]
            }
            Op::ConvTranspose2d { x, k, stride, pad } => {
                let (dx, dk) =
                    conv::conv_transpose2d_backward(self.precision, val(x), val(k), stride, pad, g);
                vec![(x, dx), (k, dk)]
            }
            Op::ChannelBias { x, b } => {
                let xs = val(x).shape();
                let (c, inner) = (xs[1], xs[2..].iter().product::<usize>());
                let mut db = vec![0.0; c];
                if rg(b) {
                    for (i, gv) in g.iter().enumerate() {
                        db[(i / inner) % c] += gv;
                    }
                }
                vec![(x, g.to_vec()), (b, db)]
            }
            Op::Add { a, b } => vec![(a, g.to_vec()), (b, g.to_vec())],
            Op::Sub { a, b } => vec![(a, g.to_vec()), (b, g.iter().map(|v| -v).collect())],
            Op::MulScalar { x, c } => vec![(x, g.iter().map(|v| v * c).collect())],
            Op::AddScalar { x } => vec![(x, g.to_vec())],
            Op::Relu { x } => {
                let d = g
                    .iter()
                    .zip(val(x).data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                vec![(x, d)]
            }
            Op::Tanh { x } => {
                let d = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(gv, y)| gv * (1.0 - y * y))
                    .collect();
                vec![(x, d)]
            }
            Op::Sum { x } => vec![(x, vec![g[0]; val(x).len()])],
            Op::WeightedSum { x, ref w } => vec![(x, w.iter().map(|v| v * g[0]).collect())],
            Op::Reshape { x } => vec![(x, g.to_vec())],
            Op::NormSq { x } => vec![(x, val(x).data().iter().map(|v| 2.0 * v * g[0]).collect())],
            Op::Norm { x } => {
                let n = node.value.item();
                let d = if n > 0.0 {
                    val(x).data().iter().map(|v| v / n * g[0]).collect()
                } else {
                    vec![0.0; val(x).len()]
                };
                vec![(x, d)]
            }
            Op::Select { x, index } => {
                let mut d = vec![0.0; val(x).len()];
                d[index * g.len()..(index + 1) * g.len()].copy_from_slice(g);
                vec![(x, d)]
            }
            Op::GridSample { src, flow } => {
                let s = val(src).shape();
                let (ds, df) =
                    sample::grid_sample_backward(val(src).data(), s[0], s[1], val(flow).data(), g);
                vec![(src, ds), (flow, df)]
            }
            Op::TranslationFlow { p } => {
                let (mut dx, mut dy) = (0.0, 0.0);
                for pair in g.chunks_exact(2) {
                    dx -= pair[0];
                    dy -= pair[1];
                }
                vec![(p, vec![dx, dy])]
            }
            Op::Blur { x, ref kernel, ksize, dims } => {
                vec![(x, sample::blur_apply(g, dims, kernel, ksize, true))]
            }
            Op::Resize { x, oh, ow } => {
                let s = val(x).shape();
                let plan = ResizePlan::new(s[0] * s[1], s[2], s[3], oh, ow);
                vec![(x, plan.backward(g))]
            }
            Op::ChannelsLast { x } => {
                let [n, c, h, w] = val(x).shape()[..] else { unreachable!() };
                let mut d = vec![0.0; g.len()];
                for b in 0..n {
                    for ch in 0..c {
                        for p in 0..h * w {
                            d[(b * c + ch) * h * w + p] = g[(b * h * w + p) * c + ch];
                        }
                    }
                }
                vec![(x, d)]
            }
            Op::Perspective { p, fx, fy } => {
                let mut d = vec![0.0; val(p).len()];
                for (i, q) in val(p).data().chunks_exact(3).enumerate() {
                    let (gu, gv) = (g[2 * i], g[2 * i + 1]);
                    let iz = 1.0 / q[2];
                    d[3 * i] = gu * fx * iz;
                    d[3 * i + 1] = gv * fy * iz;
                    d[3 * i + 2] = -(gu * fx * q[0] + gv * fy * q[1]) * iz * iz;
                }
                vec![(p, d)]
            }
            Op::Orthographic { p, scale } => {
                let d = g
                    .chunks_exact(2)
                    .flat_map(|uv| [scale * uv[0], scale * uv[1], 0.0])
                    .collect();
                vec![(p, d)]
            }
            Op::Splat { p, side, scale, offset } => {
                vec![(p, sample::splat_backward(val(p).data(), side, scale, offset, g))]
            }
        }
    }
}
