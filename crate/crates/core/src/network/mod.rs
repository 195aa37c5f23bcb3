//! Convolutional encoder-decoder mapping an image to a surface grid.
//!
//! The encoder halves the resolution once per stage; the decoder doubles
//! it back with transposed convolutions and adds mirrored encoder
//! activations. A 3-channel convolution and a bilinear resize produce the
//! `G x G x 3` output, to which a fixed template surface is added. There
//! are no fully connected layers.

mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Graph, Precision, Tensor, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_side: usize,
    pub input_channels: usize,
    pub grid_side: usize,
    /// Output channels of each encoder stage; one stage per entry.
    pub widths: Vec<usize>,
    /// `(encoder stage, decoder block)` pairs joined by addition.
    pub skips: Vec<(usize, usize)>,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Mirrored pairing of every decoder block with its encoder stage.
pub fn default_skips(num_stages: usize) -> Vec<(usize, usize)> {
    (0..num_stages.saturating_sub(1))
        .map(|j| (num_stages - 2 - j, j))
        .collect()
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            input_side: 64,
            input_channels: 3,
            grid_side: 17,
            widths: vec![16, 32, 64],
            skips: default_skips(3),
            activation: Activation::Relu,
            seed: 0,
        }
    }

    pub fn full_scale() -> Self {
        Self {
            input_side: 224,
            grid_side: 73,
            widths: vec![32, 64, 128],
            ..Self::desk()
        }
    }

    pub fn num_stages(&self) -> usize {
        self.widths.len()
    }

    pub fn latent_side(&self) -> usize {
        self.input_side >> self.num_stages()
    }

    /// Side of the last decoder activation.
    pub fn decoder_side(&self) -> usize {
        self.latent_side() << self.num_stages().saturating_sub(1)
    }

    pub fn without_skips(mut self) -> Self {
        self.skips.clear();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.num_stages();
        if s == 0 || self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("at least one encoder stage with positive width is required".into()));
        }
        if self.input_channels == 0 {
            return Err(Error::Config("input_channels must be positive".into()));
        }
        if self.input_side == 0 || self.input_side % (1 << s) != 0 {
            return Err(Error::Config(format!(
                "input side {} must be divisible by 2^{s}",
                self.input_side
            )));
        }
        if self.grid_side < 2 {
            return Err(Error::Config(format!("grid side must be >= 2, got {}", self.grid_side)));
        }
        if self.decoder_side() < self.grid_side {
            return Err(Error::Config(format!(
                "decoder resolution {} is below grid side {}",
                self.decoder_side(),
                self.grid_side
            )));
        }
        let mut seen = vec![false; s.saturating_sub(1)];
        for &(e, j) in &self.skips {
            if j + 1 >= s || e >= s {
                return Err(Error::Config(format!(
                    "skip ({e} -> {j}) refers to a missing encoder stage or decoder block"
                )));
            }
            if e + j + 2 != s {
                let enc = (self.input_side >> (e + 1), self.widths[e]);
                let dec = (self.latent_side() << (j + 1), self.widths[s - 2 - j]);
                return Err(Error::Config(format!(
                    "skip ({e} -> {j}) joins a {}x{}x{} activation with a {}x{}x{} one",
                    enc.0, enc.0, enc.1, dec.0, dec.0, dec.1
                )));
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::Config(format!("decoder block {j} has two skips")));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    TransposedConv,
    BilinearResize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

/// A built network: named parameters plus the template surface.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<(String, Tensor)>,
    template: Tensor,
    precision: Precision,
}

struct Layout {
    name: String,
    kind: LayerKind,
    weight: [usize; 4],
    fan_in: usize,
}

fn layouts(cfg: &ModelConfig) -> Vec<Layout> {
    let s = cfg.num_stages();
    let conv = |name: String, out: usize, inp: usize, k: usize| Layout {
        name,
        kind: LayerKind::Conv,
        weight: [out, inp, k, k],
        fan_in: inp * k * k,
    };
    let mut out = Vec::new();
    let mut c_in = cfg.input_channels;
    for (e, &w) in cfg.widths.iter().enumerate() {
        out.push(conv(format!("enc{e}.conv1"), w, c_in, 3));
        out.push(conv(format!("enc{e}.conv2"), w, w, 3));
        c_in = w;
    }
    for j in 0..s - 1 {
        let (from, to) = (cfg.widths[s - 1 - j], cfg.widths[s - 2 - j]);
        out.push(Layout {
            name: format!("dec{j}.up"),
            kind: LayerKind::TransposedConv,
            weight: [from, to, 2, 2],
            fan_in: from,
        });
        out.push(conv(format!("dec{j}.conv"), to, to, 3));
    }
    out.push(conv("head".into(), 3, cfg.widths[0], 3));
    out
}

impl Model {
    /// He-initialized weights and zero biases from `cfg.seed`; zero template.
    pub fn build(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = Vec::new();
        for l in layouts(cfg) {
            let std = (2.0 / l.fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).map_err(|e| Error::Parameter(e.to_string()))?;
            params.push((format!("{}.weight", l.name), Tensor::from_fn(&l.weight, |_| normal.sample(&mut rng))));
            let bias_len = if l.kind == LayerKind::TransposedConv { l.weight[1] } else { l.weight[0] };
            params.push((format!("{}.bias", l.name), Tensor::zeros(&[bias_len])));
        }
        let g = cfg.grid_side;
        Ok(Self {
            config: cfg.clone(),
            params,
            template: Tensor::zeros(&[g, g, 3]),
            precision: Precision::F64,
        })
    }

    pub(crate) fn from_parts(config: ModelConfig, params: Vec<(String, Tensor)>, template: Tensor) -> Result<Self> {
        let reference = Self::build(&config)?;
        if reference.params.len() != params.len() {
            return Err(Error::ConfigMismatch(format!(
                "expected {} parameter arrays, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for ((rn, rt), (n, t)) in reference.params.iter().zip(&params) {
            if rn != n || rt.shape() != t.shape() {
                return Err(Error::ConfigMismatch(format!(
                    "parameter {n} {:?} does not match expected {rn} {:?}",
                    t.shape(),
                    rt.shape()
                )));
            }
        }
        if template.shape() != reference.template.shape() {
            return Err(Error::ConfigMismatch(format!("template shape {:?}", template.shape())));
        }
        Ok(Self {
            config,
            params,
            template,
            precision: Precision::F64,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    /// Hex SHA-256 over parameter names, shapes and values.
    pub fn parameter_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.params {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        for v in self.template.data() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn template(&self) -> &Tensor {
        &self.template
    }

    /// Fixed `[G, G, 3]` surface added to every prediction.
    pub fn set_template(&mut self, template: Tensor) -> Result<()> {
        if template.shape() != self.template.shape() {
            return dim_err(format!(
                "template must be {:?}, got {:?}",
                self.template.shape(),
                template.shape()
            ));
        }
        self.template = template;
        Ok(())
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn set_precision(&mut self, precision: Precision) {
        self.precision = precision;
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut out: Vec<LayerSpec> = layouts(&self.config)
            .into_iter()
            .map(|l| LayerSpec {
                name: l.name,
                kind: l.kind,
            })
            .collect();
        out.push(LayerSpec {
            name: "resize".into(),
            kind: LayerKind::BilinearResize,
        });
        out
    }

    /// Registers every parameter as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|(_, t)| g.leaf(t.clone())).collect()
    }

    /// Registers every parameter as a constant.
    pub fn bind_frozen(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|(_, t)| g.constant(t.clone())).collect()
    }

    fn check_input(&self, g: &Graph, images: Var) -> Result<usize> {
        let c = &self.config;
        match *g.shape(images) {
            [n, ch, h, w] if ch == c.input_channels && h == c.input_side && w == c.input_side => Ok(n),
            ref s => dim_err(format!(
                "network expects [N, {}, {}, {}] images, got {s:?}",
                c.input_channels, c.input_side, c.input_side
            )),
        }
    }

    fn act(&self, g: &mut Graph, x: Var) -> Var {
        match self.config.activation {
            Activation::Relu => g.relu(x),
            Activation::Identity => x,
        }
    }

    fn conv(&self, g: &mut Graph, x: Var, p: &[Var], idx: usize, stride: usize) -> Result<Var> {
        let y = g.conv2d(x, p[2 * idx], stride, 1)?;
        g.add_channel_bias(y, p[2 * idx + 1])
    }

    /// Encoder activations after each stage; the last is the latent code.
    pub fn encode_with(&self, g: &mut Graph, images: Var, p: &[Var]) -> Result<Vec<Var>> {
        self.check_input(g, images)?;
        if p.len() != self.params.len() {
            return dim_err(format!("expected {} parameter variables, got {}", self.params.len(), p.len()));
        }
        let mut x = images;
        let mut stages = Vec::with_capacity(self.config.num_stages());
        for e in 0..self.config.num_stages() {
            let y = self.conv(g, x, p, 2 * e, 1)?;
            let y = self.act(g, y);
            let y = self.conv(g, y, p, 2 * e + 1, 2)?;
            x = self.act(g, y);
            stages.push(x);
        }
        Ok(stages)
    }

    /// `[N, G, G, 3]` surfaces from `[N, C, H, W]` images using the given
    /// parameter variables (in [`Model::parameters`] order).
    pub fn forward_with(&self, g: &mut Graph, images: Var, p: &[Var]) -> Result<Var> {
        let n = self.check_input(g, images)?;
        let stages = self.encode_with(g, images, p)?;
        let s = self.config.num_stages();
        let mut x = *stages.last().expect("one stage");
        let mut layer = 2 * s;
        for j in 0..s - 1 {
            let up = g.conv_transpose2d(x, p[2 * layer], 2, 0)?;
            let up = g.add_channel_bias(up, p[2 * layer + 1])?;
            let mut y = self.act(g, up);
            if let Some(&(e, _)) = self.config.skips.iter().find(|(_, d)| *d == j) {
                y = g.add(y, stages[e])?;
            }
            let y = self.conv(g, y, p, layer + 1, 1)?;
            x = self.act(g, y);
            layer += 2;
        }
        let head = self.conv(g, x, p, layer, 1)?;
        let gs = self.config.grid_side;
        let resized = g.resize_bilinear(head, gs, gs)?;
        let surf = g.channels_last(resized)?;
        let tiled: Vec<f64> = (0..n).flat_map(|_| self.template.data().iter().copied()).collect();
        let template = g.constant(Tensor::new(vec![n, gs, gs, 3], tiled)?);
        g.add(surf, template)
    }

    /// Differentiable forward pass with fresh parameter leaves.
    pub fn forward(&self, g: &mut Graph, images: Var) -> Result<(Var, Vec<Var>)> {
        let p = self.bind(g);
        let out = self.forward_with(g, images, &p)?;
        Ok((out, p))
    }

    /// Inference on concrete images.
    pub fn predict(&self, images: &Tensor) -> Result<Tensor> {
        let mut g = Graph::with_precision(self.precision);
        let x = g.constant(images.clone());
        let p = self.bind_frozen(&mut g);
        let out = self.forward_with(&mut g, x, &p)?;
        Ok(g.value(out).clone())
    }

    /// Latent activation of concrete images.
    pub fn encode(&self, images: &Tensor) -> Result<Tensor> {
        let mut g = Graph::with_precision(self.precision);
        let x = g.constant(images.clone());
        let p = self.bind_frozen(&mut g);
        let stages = self.encode_with(&mut g, x, &p)?;
        Ok(g.value(*stages.last().expect("one stage")).clone())
    }

    /// Sets every parameter of the named layer prefix to zero.
    pub fn zero_layer(&mut self, prefix: &str) {
        for (name, t) in &mut self.params {
            if name.starts_with(prefix) {
                t.data_mut().fill(0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests;
