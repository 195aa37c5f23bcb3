//! Surface albedo images: procedural patterns or raw 8-bit RGB files.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Smooth reddish tissue-like blotches with thin vessels.
    Endoscopy,
    /// Saturated diagonal bands with sprayed spots.
    Graffiti,
    /// Two-tone woven checks.
    Clothes,
    /// Fine high-frequency fibre noise.
    Carpet,
    Checkerboard,
    Noise,
    Stripes,
    White,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum TextureSource {
    Procedural { pattern: Pattern },
    /// Interleaved 8-bit RGB without header.
    Raw { path: PathBuf, width: usize, height: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    pub name: String,
    #[serde(flatten)]
    pub source: TextureSource,
}

impl TextureSpec {
    pub fn procedural(name: &str, pattern: Pattern) -> Self {
        Self {
            name: name.to_string(),
            source: TextureSource::Procedural { pattern },
        }
    }

    /// endoscopy, graffiti, clothes, carpet.
    pub fn defaults() -> Vec<Self> {
        vec![
            Self::procedural("endoscopy", Pattern::Endoscopy),
            Self::procedural("graffiti", Pattern::Graffiti),
            Self::procedural("clothes", Pattern::Clothes),
            Self::procedural("carpet", Pattern::Carpet),
        ]
    }

    /// Materializes the texture; procedural ones use `side x side` texels.
    pub fn build(&self, side: usize, seed: u64) -> Result<Texture> {
        match &self.source {
            TextureSource::Procedural { pattern } => Ok(Texture::procedural(*pattern, side, seed)),
            TextureSource::Raw { path, width, height } => Texture::load_raw(path, *width, *height),
        }
    }
}

/// RGB albedo in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    width: usize,
    height: usize,
    rgb: Vec<f64>,
}

/// Smoothly interpolated lattice noise in `[0, 1]`.
struct ValueNoise {
    cells: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(cells: usize, rng: &mut ChaCha8Rng) -> Self {
        let lattice = (0..(cells + 1) * (cells + 1)).map(|_| rng.random::<f64>()).collect();
        Self { cells, lattice }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let (fx, fy) = (x * self.cells as f64, y * self.cells as f64);
        let (i, j) = ((fx.floor() as usize).min(self.cells - 1), (fy.floor() as usize).min(self.cells - 1));
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (smooth(fx - i as f64), smooth(fy - j as f64));
        let v = |a: usize, b: usize| self.lattice[b * (self.cells + 1) + a];
        let top = v(i, j) * (1.0 - tx) + v(i + 1, j) * tx;
        let bottom = v(i, j + 1) * (1.0 - tx) + v(i + 1, j + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

fn octaves(layers: &[ValueNoise], x: f64, y: f64) -> f64 {
    let mut total = 0.0;
    let mut norm = 0.0;
    for (k, layer) in layers.iter().enumerate() {
        let w = 0.5f64.powi(k as i32);
        total += w * layer.at(x, y);
        norm += w;
    }
    total / norm
}

impl Texture {
    pub fn new(width: usize, height: usize, rgb: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || rgb.len() != width * height * 3 {
            return Err(Error::Dimension(format!(
                "texture {width}x{height} needs {} values, got {}",
                width * height * 3,
                rgb.len()
            )));
        }
        Ok(Self { width, height, rgb })
    }

    pub fn uniform(color: [f64; 3]) -> Self {
        Self {
            width: 1,
            height: 1,
            rgb: color.to_vec(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    pub fn load_raw(path: &Path, width: usize, height: usize) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_rgb8(width, height, &bytes).map_err(|_| {
            Error::Config(format!(
                "{} holds {} bytes, expected {width}x{height}x3",
                path.display(),
                bytes.len()
            ))
        })
    }

    pub fn procedural(pattern: Pattern, side: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (pattern as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let side = side.max(2);
        let coarse: Vec<ValueNoise> = [4, 8, 16].iter().map(|&c| ValueNoise::new(c, &mut rng)).collect();
        let fine: Vec<ValueNoise> = [32, 64].iter().map(|&c| ValueNoise::new(c, &mut rng)).collect();
        let palette: Vec<[f64; 3]> = (0..6)
            .map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let spots: Vec<(f64, f64, f64, usize)> = (0..12)
            .map(|_| (rng.random(), rng.random(), rng.random_range(0.03..0.09), rng.random_range(0..6)))
            .collect();
        let mut rgb = Vec::with_capacity(side * side * 3);
        for row in 0..side {
            for col in 0..side {
                let (x, y) = (col as f64 / (side - 1) as f64, row as f64 / (side - 1) as f64);
                let c = match pattern {
                    Pattern::Endoscopy => {
                        let n = octaves(&coarse, x, y);
                        let vessel = (1.0 - (octaves(&coarse[1..], y, x) - 0.5).abs() * 25.0).max(0.0);
                        let base = [0.55 + 0.4 * n, 0.2 + 0.25 * n, 0.18 + 0.15 * n];
                        [base[0] - 0.25 * vessel, base[1] - 0.12 * vessel, base[2] - 0.05 * vessel]
                    }
                    Pattern::Graffiti => {
                        let band = ((x + 0.6 * y) * 5.0 + 2.0 * octaves(&coarse, x, y)).floor() as usize % palette.len();
                        let mut c = palette[band];
                        for &(sx, sy, r, k) in &spots {
                            if (x - sx).powi(2) + (y - sy).powi(2) < r * r {
                                c = palette[(k + 1) % palette.len()];
                            }
                        }
                        c
                    }
                    Pattern::Clothes => {
                        let check = ((x * 8.0).floor() as i64 + (y * 8.0).floor() as i64) % 2 == 0;
                        let weave = 0.85 + 0.15 * ((x * 64.0 * std::f64::consts::PI).sin() * (y * 64.0 * std::f64::consts::PI).sin());
                        let c = if check { [0.2, 0.3, 0.65] } else { [0.9, 0.88, 0.8] };
                        [c[0] * weave, c[1] * weave, c[2] * weave]
                    }
                    Pattern::Carpet => {
                        let n = octaves(&fine, x, y);
                        let grain = rng.random::<f64>();
                        let v = 0.35 + 0.4 * n + 0.25 * grain;
                        [0.75 * v, 0.55 * v, 0.3 * v]
                    }
                    Pattern::Checkerboard => {
                        let v = if ((x * 8.0).floor() as i64 + (y * 8.0).floor() as i64) % 2 == 0 { 0.9 } else { 0.15 };
                        [v; 3]
                    }
                    Pattern::Noise => {
                        let n = octaves(&coarse, x, y);
                        [n; 3]
                    }
                    Pattern::Stripes => {
                        let v = if (x * 10.0).floor() as i64 % 2 == 0 { 0.85 } else { 0.25 };
                        [v, 0.5 * v + 0.2, 0.3]
                    }
                    Pattern::White => [1.0; 3],
                };
                rgb.extend(c.iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self {
            width: side,
            height: side,
            rgb,
        }
    }

    /// Bilinear lookup at texture coordinates `(u, v)` in `[0, 1]^2`.
    pub fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        let x = u.clamp(0.0, 1.0) * (self.width - 1) as f64;
        let y = v.clamp(0.0, 1.0) * (self.height - 1) as f64;
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (tx, ty) = (x - x0 as f64, y - y0 as f64);
        let px = |c: usize, r: usize, k: usize| self.rgb[3 * (r * self.width + c) + k];
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            let top = px(x0, y0, k) * (1.0 - tx) + px(x1, y0, k) * tx;
            let bottom = px(x0, y1, k) * (1.0 - tx) + px(x1, y1, k) * tx;
            *o = top * (1.0 - ty) + bottom * ty;
        }
        out
    }
}
