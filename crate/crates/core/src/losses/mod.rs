//! Training losses on predicted surface sequences: a 3D data term, an
//! isometry prior built on Gaussian smoothing, and a contour term that
//! compares soft rasterizations of the projected surfaces.
//!
//! All losses take `[F, G, G, 3]` graph variables so they can be
//! differentiated together with the network that produced them.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::tensor::{sample, Graph, Tensor, Var};

/// Affine map `r = scale * u + offset` from image pixels to raster cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterMap {
    pub scale: f64,
    pub offset: f64,
}

impl RasterMap {
    /// Maps the image extent `[0, image_side)` onto `[0, raster_side)`.
    pub fn for_image(image_side: usize, raster_side: usize) -> Self {
        Self {
            scale: raster_side as f64 / image_side as f64,
            offset: 0.0,
        }
    }
}

/// Which loss terms participate in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossTerms {
    pub three_d: bool,
    pub iso: bool,
    pub contour: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self::all()
    }
}

impl LossTerms {
    pub fn all() -> Self {
        Self {
            three_d: true,
            iso: true,
            contour: true,
        }
    }

    pub fn only_3d() -> Self {
        Self {
            three_d: true,
            iso: false,
            contour: false,
        }
    }

    /// Parses a comma list such as `3d,iso,cont`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut terms = Self {
            three_d: false,
            iso: false,
            contour: false,
        };
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item.to_ascii_lowercase().as_str() {
                "3d" => terms.three_d = true,
                "iso" => terms.iso = true,
                "cont" | "con" | "contour" => terms.contour = true,
                other => return Err(Error::Config(format!("unknown loss term '{other}'"))),
            }
        }
        if !(terms.three_d || terms.iso || terms.contour) {
            return Err(Error::Config("at least one loss term must be enabled".into()));
        }
        Ok(terms)
    }

    /// Table label, e.g. `3D+Con.+Iso.`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.three_d {
            parts.push("3D");
        }
        if self.contour {
            parts.push("Con.");
        }
        if self.iso {
            parts.push("Iso.");
        }
        parts.join("+")
    }

    /// Comma list accepted by [`LossTerms::parse`].
    pub fn flags(&self) -> String {
        let mut parts = Vec::new();
        if self.three_d {
            parts.push("3d");
        }
        if self.iso {
            parts.push("iso");
        }
        if self.contour {
            parts.push("cont");
        }
        parts.join(",")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub w3d: f64,
    pub wiso: f64,
    pub wcont: f64,
    pub sigma_gauss: f64,
    pub ksize: usize,
    pub raster_side: usize,
    pub raster_map: RasterMap,
    pub terms: LossTerms,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::for_image_side(64)
    }
}

impl LossConfig {
    pub fn for_image_side(image_side: usize) -> Self {
        Self {
            w3d: 1.0,
            wiso: 1.0,
            wcont: 1.0,
            sigma_gauss: 1.0,
            ksize: 5,
            raster_side: 99,
            raster_map: RasterMap::for_image(image_side, 99),
            terms: LossTerms::all(),
        }
    }

    pub fn with_terms(mut self, terms: LossTerms) -> Self {
        self.terms = terms;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w3d", self.w3d), ("wiso", self.wiso), ("wcont", self.wcont)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} must be >= 0, got {w}")));
            }
        }
        if self.ksize % 2 == 0 {
            return Err(Error::Config(format!("ksize must be odd, got {}", self.ksize)));
        }
        if !(self.sigma_gauss > 0.0 && self.sigma_gauss.is_finite()) {
            return Err(Error::Config(format!("sigma_gauss must be positive, got {}", self.sigma_gauss)));
        }
        if self.raster_side < 3 || self.raster_side % 2 == 0 {
            return Err(Error::Config(format!(
                "raster side must be odd and >= 3, got {}",
                self.raster_side
            )));
        }
        if !(self.raster_map.scale > 0.0 && self.raster_map.scale.is_finite() && self.raster_map.offset.is_finite()) {
            return Err(Error::Config(format!("invalid raster map {:?}", self.raster_map)));
        }
        Ok(())
    }
}

fn surface_dims(g: &Graph, s: Var, what: &str) -> Result<(usize, usize)> {
    match *g.shape(s) {
        [f, n, n2, 3] if n == n2 => Ok((f, n)),
        ref s => dim_err(format!("{what} expects [F, G, G, 3] surfaces, got {s:?}")),
    }
}

fn check_pair(g: &Graph, pred: Var, gt: Var, what: &str) -> Result<usize> {
    let (f, _) = surface_dims(g, pred, what)?;
    if g.shape(pred) != g.shape(gt) {
        return dim_err(format!(
            "{what}: prediction {:?} and ground truth {:?} differ",
            g.shape(pred),
            g.shape(gt)
        ));
    }
    Ok(f)
}

/// `(1/F) sum_f ||S_f^GT - S_f||_F^2`.
pub fn loss_3d(g: &mut Graph, pred: Var, gt: Var) -> Result<Var> {
    let f = check_pair(g, pred, gt, "loss_3d")?;
    let d = g.sub(pred, gt)?;
    let sq = g.frobenius_norm_sq(d);
    Ok(g.mul_scalar(sq, 1.0 / f as f64))
}

/// `(1/F) sum_f ||blur(S_f) - S_f||_F` with the unsquared norm.
pub fn loss_iso(g: &mut Graph, pred: Var, cfg: &LossConfig) -> Result<Var> {
    let (f, _) = surface_dims(g, pred, "loss_iso")?;
    let smooth = g.gaussian_blur2d(pred, cfg.sigma_gauss, cfg.ksize)?;
    let resid = g.sub(smooth, pred)?;
    let mut total = None;
    for i in 0..f {
        let frame = g.select(resid, i)?;
        let n = g.frobenius_norm(frame);
        total = Some(match total {
            None => n,
            Some(t) => g.add(t, n)?,
        });
    }
    Ok(g.mul_scalar(total.expect("at least one frame"), 1.0 / f as f64))
}

/// `max(tanh(2x), 0)` elementwise.
pub fn tau(g: &mut Graph, x: Var) -> Var {
    let x2 = g.mul_scalar(x, 2.0);
    let t = g.tanh(x2);
    g.relu(t)
}

pub fn tau_value(x: f64) -> f64 {
    (2.0 * x).tanh().max(0.0)
}

/// Soft silhouette of `[..., 2]` image points on the `R x R` raster:
/// bilinear splatting of every point followed by `tau`.
pub fn soft_rasterize(g: &mut Graph, points2d: Var, cfg: &LossConfig) -> Result<Var> {
    let m = cfg.raster_map;
    let raster = g.splat_bilinear(points2d, cfg.raster_side, m.scale, m.offset)?;
    Ok(tau(g, raster))
}

/// Value-only [`soft_rasterize`] on flat `[u, v, ...]` points.
pub fn soft_rasterize_values(points2d: &[f64], cfg: &LossConfig) -> Vec<f64> {
    let m = cfg.raster_map;
    sample::splat_forward(points2d, cfg.raster_side, m.scale, m.offset)
        .into_iter()
        .map(tau_value)
        .collect()
}

/// Centered delta image sampled through per-point translation flows.
#[derive(Debug, Clone)]
pub struct ContourStamp {
    basis: Tensor,
}

impl ContourStamp {
    pub fn new(raster_side: usize) -> Result<Self> {
        if raster_side < 3 || raster_side % 2 == 0 {
            return Err(Error::Parameter(format!(
                "contour stamp needs an odd raster side >= 3, got {raster_side}"
            )));
        }
        let c = (raster_side - 1) / 2;
        let mut basis = Tensor::zeros(&[raster_side, raster_side]);
        basis.data_mut()[c * raster_side + c] = 1.0;
        Ok(Self { basis })
    }

    pub fn basis(&self) -> &Tensor {
        &self.basis
    }

    pub fn side(&self) -> usize {
        self.basis.shape()[0]
    }

    /// Sum over points of the basis warped to each point, before `tau`.
    /// Slower than splatting; produces the same raster.
    pub fn accumulate(&self, g: &mut Graph, points2d: Var, map: RasterMap) -> Result<Var> {
        let n = g.value(points2d).len();
        if n % 2 != 0 || g.shape(points2d).last() != Some(&2) {
            return dim_err(format!("stamp expects [..., 2] points, got {:?}", g.shape(points2d)));
        }
        let k = n / 2;
        let flat = g.reshape(points2d, &[k, 2])?;
        let scaled = g.mul_scalar(flat, map.scale);
        let mapped = g.add_scalar(scaled, map.offset);
        let basis = g.constant(self.basis.clone());
        let mut total = None;
        for j in 0..k {
            let p = g.select(mapped, j)?;
            let flow = g.translation_flow(p, self.side())?;
            let warped = g.grid_sample_bilinear(basis, flow)?;
            total = Some(match total {
                None => warped,
                Some(t) => g.add(t, warped)?,
            });
        }
        Ok(total.expect("at least one point"))
    }
}

/// `(1/F) sum_f ||tau(raster(pi(S_f))) - tau(raster(pi(S_f^GT)))||_F^2`.
/// Only the prediction receives gradient.
pub fn loss_contour(
    g: &mut Graph,
    pred: Var,
    gt: Var,
    cam: &CameraIntrinsics,
    cfg: &LossConfig,
) -> Result<Var> {
    let f = check_pair(g, pred, gt, "loss_contour")?;
    let per_frame = g.value(gt).len() / f;
    let mut total = None;
    for i in 0..f {
        let gt_points = &g.value(gt).data()[i * per_frame..(i + 1) * per_frame];
        let gt_uv = project_values(gt_points, cam)?;
        let gt_raster = Tensor::new(
            vec![cfg.raster_side, cfg.raster_side],
            soft_rasterize_values(&gt_uv, cfg),
        )?;
        let target = g.constant(gt_raster);
        let frame = g.select(pred, i)?;
        let uv = cam.project(g, frame)?;
        let raster = soft_rasterize(g, uv, cfg)?;
        let d = g.sub(raster, target)?;
        let sq = g.frobenius_norm_sq(d);
        total = Some(match total {
            None => sq,
            Some(t) => g.add(t, sq)?,
        });
    }
    Ok(g.mul_scalar(total.expect("at least one frame"), 1.0 / f as f64))
}

fn project_values(points: &[f64], cam: &CameraIntrinsics) -> Result<Vec<f64>> {
    match cam.mode {
        crate::geometry::ProjectionMode::Perspective => crate::geometry::project_perspective(points, cam),
        crate::geometry::ProjectionMode::Orthographic => Ok(crate::geometry::project_orthographic(points, cam)),
    }
}

/// Unweighted value of every term; disabled terms read 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub three_d: f64,
    pub iso: f64,
    pub contour: f64,
    pub total: f64,
}

/// Weighted sum of the enabled terms.
pub fn total_loss(
    g: &mut Graph,
    pred: Var,
    gt: Var,
    cam: &CameraIntrinsics,
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    check_pair(g, pred, gt, "total_loss")?;
    let mut breakdown = LossBreakdown::default();
    let mut parts = Vec::new();
    if cfg.terms.three_d {
        let l = loss_3d(g, pred, gt)?;
        breakdown.three_d = g.value(l).item();
        parts.push(g.mul_scalar(l, cfg.w3d));
    }
    if cfg.terms.iso {
        let l = loss_iso(g, pred, cfg)?;
        breakdown.iso = g.value(l).item();
        parts.push(g.mul_scalar(l, cfg.wiso));
    }
    if cfg.terms.contour {
        let l = loss_contour(g, pred, gt, cam, cfg)?;
        breakdown.contour = g.value(l).item();
        parts.push(g.mul_scalar(l, cfg.wcont));
    }
    let mut total = match parts.first() {
        Some(&p) => p,
        None => {
            let zero = g.constant(Tensor::scalar(0.0));
            g.mul_scalar(zero, 1.0)
        }
    };
    for &p in parts.iter().skip(1) {
        total = g.add(total, p)?;
    }
    breakdown.total = g.value(total).item();
    Ok((total, breakdown))
}
