//! Software rasterizer: two triangles per grid cell, z-buffer, back-face
//! culling, perspective-correct attributes and per-pixel shading.

use serde::{Deserialize, Serialize};

use super::texture::Texture;
use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;

/// Rotation of the scene about a pivot, standing in for camera extrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct CameraPose {
    /// Rotation about the vertical image axis, degrees.
    pub yaw_deg: f64,
    /// Rotation about the horizontal image axis, degrees.
    pub pitch_deg: f64,
}

impl CameraPose {
    /// Maps a point in the reference camera frame into this pose's frame.
    pub fn apply(&self, p: [f64; 3], pivot: [f64; 3]) -> [f64; 3] {
        let (sy, cy) = self.yaw_deg.to_radians().sin_cos();
        let (sp, cp) = self.pitch_deg.to_radians().sin_cos();
        let d = [p[0] - pivot[0], p[1] - pivot[1], p[2] - pivot[2]];
        let yawed = [cy * d[0] + sy * d[2], d[1], -sy * d[0] + cy * d[2]];
        let pitched = [yawed[0], cp * yawed[1] - sp * yawed[2], sp * yawed[1] + cp * yawed[2]];
        [pitched[0] + pivot[0], pitched[1] + pivot[1], pitched[2] + pivot[2]]
    }
}

/// Point light in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointLight {
    pub position: [f64; 3],
    pub intensity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShadingModel {
    Lambert,
    #[default]
    CookTorrance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Shading {
    pub model: ShadingModel,
    pub ambient: f64,
    pub diffuse: f64,
    pub specular: f64,
    /// Beckmann slope roughness.
    pub roughness: f64,
    /// Reflectance at normal incidence.
    pub fresnel: f64,
}

impl Default for Shading {
    fn default() -> Self {
        Self {
            model: ShadingModel::CookTorrance,
            ambient: 0.25,
            diffuse: 0.75,
            specular: 0.6,
            roughness: 0.3,
            fresnel: 0.3,
        }
    }
}

impl Shading {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.ambient, self.diffuse, self.specular, self.fresnel];
        if vals.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || !(self.roughness > 0.0) || self.fresnel > 1.0 {
            return Err(Error::Config(format!("invalid shading parameters {self:?}")));
        }
        Ok(())
    }
}

/// Everything the rasterizer needs besides geometry, light and albedo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    pub image_side: usize,
    pub camera: CameraIntrinsics,
    pub shading: Shading,
    pub background: [u8; 3],
}

type V3 = [f64; 3];

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: V3, b: V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(a: V3) -> V3 {
    let n = dot(a, a).sqrt();
    if n > 0.0 {
        [a[0] / n, a[1] / n, a[2] / n]
    } else {
        a
    }
}

/// Triangles per cell, wound so the front side faces the camera at rest.
fn grid_triangles(g: usize) -> Vec<[usize; 3]> {
    let mut tris = Vec::with_capacity(2 * (g - 1) * (g - 1));
    for i in 0..g - 1 {
        for j in 0..g - 1 {
            let k = i * g + j;
            tris.push([k, k + 1, k + g]);
            tris.push([k + g, k + 1, k + g + 1]);
        }
    }
    tris
}

/// Color of a lit surface point; `n`, `l`, `v` are unit vectors.
fn shade(albedo: V3, n: V3, l: V3, v: V3, light: &PointLight, s: &Shading) -> V3 {
    let nl = dot(n, l).max(0.0);
    let diffuse = s.ambient + s.diffuse * light.intensity * nl;
    let mut spec = 0.0;
    if s.model == ShadingModel::CookTorrance && nl > 0.0 {
        let nv = dot(n, v).max(1e-4);
        let h = normalize([l[0] + v[0], l[1] + v[1], l[2] + v[2]]);
        let nh = dot(n, h).max(1e-4);
        let vh = dot(v, h).max(1e-4);
        let m2 = s.roughness * s.roughness;
        let nh2 = nh * nh;
        let beckmann = ((nh2 - 1.0) / (m2 * nh2)).exp() / (std::f64::consts::PI * m2 * nh2 * nh2);
        let fresnel = s.fresnel + (1.0 - s.fresnel) * (1.0 - vh).powi(5);
        let masking = (2.0 * nh * nv / vh).min(2.0 * nh * nl / vh).min(1.0);
        spec = s.specular * light.intensity * beckmann * fresnel * masking / (4.0 * nv);
    }
    [albedo[0] * diffuse + spec, albedo[1] * diffuse + spec, albedo[2] * diffuse + spec]
}

/// Renders a `G x G` grid given in the reference camera frame. The pose is
/// applied about `pivot`; lights live in the camera frame. Returns
/// interleaved 8-bit RGB of `image_side^2` pixels.
#[allow(clippy::too_many_arguments)]
pub fn render_frame(
    surface: &[f64],
    grid_side: usize,
    pose: &CameraPose,
    pivot: [f64; 3],
    light: &PointLight,
    texture: &Texture,
    settings: &RenderSettings,
) -> Result<Vec<u8>> {
    let g = grid_side;
    if g < 2 || surface.len() != g * g * 3 {
        return Err(Error::Dimension(format!(
            "surface of {} values is not a {g}x{g}x3 grid",
            surface.len()
        )));
    }
    let side = settings.image_side;
    let cam = &settings.camera;
    let points: Vec<V3> = surface
        .chunks_exact(3)
        .map(|p| pose.apply([p[0], p[1], p[2]], pivot))
        .collect();
    let pixels: Vec<[f64; 2]> = points
        .iter()
        .enumerate()
        .map(|(index, &p)| {
            cam.project_point(p).map_err(|e| match e {
                Error::DegenerateDepth { z, .. } => Error::DegenerateDepth { index, z },
                other => other,
            })
        })
        .collect::<Result<_>>()?;

    let tris = grid_triangles(g);
    // area-weighted vertex normals, oriented toward the camera at rest
    let mut normals = vec![[0.0; 3]; g * g];
    for t in &tris {
        let n = cross(sub(points[t[2]], points[t[0]]), sub(points[t[1]], points[t[0]]));
        for &k in t {
            for c in 0..3 {
                normals[k][c] += n[c];
            }
        }
    }
    let normals: Vec<V3> = normals.into_iter().map(normalize).collect();
    let uv = |k: usize| [(k % g) as f64 / (g - 1) as f64, (k / g) as f64 / (g - 1) as f64];

    let mut depth = vec![f64::INFINITY; side * side];
    let mut color = vec![[0.0; 3]; side * side];
    for t in &tris {
        let [a, b, c] = [pixels[t[0]], pixels[t[1]], pixels[t[2]]];
        let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if area <= 0.0 {
            continue;
        }
        let lo_x = a[0].min(b[0]).min(c[0]).floor().max(0.0) as usize;
        let lo_y = a[1].min(b[1]).min(c[1]).floor().max(0.0) as usize;
        let hi_x = a[0].max(b[0]).max(c[0]).ceil().min(side as f64) as usize;
        let hi_y = a[1].max(b[1]).max(c[1]).ceil().min(side as f64) as usize;
        let inv_z = [1.0 / points[t[0]][2], 1.0 / points[t[1]][2], 1.0 / points[t[2]][2]];
        for py in lo_y..hi_y {
            for px in lo_x..hi_x {
                let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
                let w0 = ((b[0] - x) * (c[1] - y) - (b[1] - y) * (c[0] - x)) / area;
                let w1 = ((c[0] - x) * (a[1] - y) - (c[1] - y) * (a[0] - x)) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let persp = [w0 * inv_z[0], w1 * inv_z[1], w2 * inv_z[2]];
                let total = persp[0] + persp[1] + persp[2];
                let z = 1.0 / total;
                let idx = py * side + px;
                if z >= depth[idx] {
                    continue;
                }
                depth[idx] = z;
                let lerp = |f: &dyn Fn(usize) -> V3| {
                    let mut out = [0.0; 3];
                    for (wk, &k) in persp.iter().zip(t) {
                        let v = f(k);
                        for ch in 0..3 {
                            out[ch] += wk * v[ch] / total;
                        }
                    }
                    out
                };
                let pos = lerp(&|k| points[k]);
                let n = normalize(lerp(&|k| normals[k]));
                let tex = lerp(&|k| {
                    let [u, v] = uv(k);
                    [u, v, 0.0]
                });
                let albedo = texture.sample(tex[0], tex[1]);
                let l = normalize(sub(light.position, pos));
                let v = normalize([-pos[0], -pos[1], -pos[2]]);
                color[idx] = shade(albedo, n, l, v, light, &settings.shading);
            }
        }
    }
    let mut out = Vec::with_capacity(side * side * 3);
    for (d, c) in depth.iter().zip(&color) {
        if d.is_finite() {
            out.extend(c.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        } else {
            out.extend_from_slice(&settings.background);
        }
    }
    Ok(out)
}
