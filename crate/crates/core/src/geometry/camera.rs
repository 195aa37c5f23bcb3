use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

/// Image side the reference intrinsics were specified for.
pub const REFERENCE_IMAGE_SIDE: f64 = 256.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMode {
    Perspective,
    Orthographic,
}

/// Pinhole intrinsics plus the projection model used for the contour term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub mode: ProjectionMode,
    /// Pixels per length unit, orthographic mode only.
    pub ortho_scale: f64,
}

impl CameraIntrinsics {
    pub fn perspective(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            mode: ProjectionMode::Perspective,
            ortho_scale: 1.0,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn orthographic(ortho_scale: f64, cx: f64, cy: f64) -> Result<Self> {
        let cam = Self {
            fx: 1.0,
            fy: 1.0,
            cx,
            cy,
            mode: ProjectionMode::Orthographic,
            ortho_scale,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// K = [[280, 0, 128], [0, 497.7, 128], [0, 0, 1]] for 256-pixel images.
    pub fn reference() -> Self {
        Self {
            fx: 280.0,
            fy: 497.7,
            cx: 128.0,
            cy: 128.0,
            mode: ProjectionMode::Perspective,
            ortho_scale: 1.0,
        }
    }

    /// Reference intrinsics rescaled to square images of `image_side` pixels.
    pub fn for_image_side(image_side: usize) -> Self {
        Self::reference().scaled(image_side as f64 / REFERENCE_IMAGE_SIDE)
    }

    /// Scales focal lengths, principal point and orthographic scale by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            fx: self.fx * s,
            fy: self.fy * s,
            cx: self.cx * s,
            cy: self.cy * s,
            mode: self.mode,
            ortho_scale: self.ortho_scale * s,
        }
    }

    pub fn with_mode(mut self, mode: ProjectionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.ortho_scale > 0.0
            && [self.fx, self.fy, self.cx, self.cy, self.ortho_scale]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid camera intrinsics {self:?}")))
        }
    }

    /// Differentiable projection of `[..., 3]` points with this camera's mode.
    pub fn project(&self, g: &mut Graph, points: Var) -> Result<Var> {
        match self.mode {
            ProjectionMode::Perspective => g.project_perspective(points, self.fx, self.fy, self.cx, self.cy),
            ProjectionMode::Orthographic => {
                g.project_orthographic(points, self.ortho_scale, self.cx, self.cy)
            }
        }
    }

    pub fn project_point(&self, p: [f64; 3]) -> Result<[f64; 2]> {
        match self.mode {
            ProjectionMode::Perspective => {
                if !(p[2] > 0.0) {
                    return Err(Error::DegenerateDepth { index: 0, z: p[2] });
                }
                Ok([self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy])
            }
            ProjectionMode::Orthographic => Ok([
                self.ortho_scale * p[0] + self.cx,
                self.ortho_scale * p[1] + self.cy,
            ]),
        }
    }
}

/// Projects flat `[x, y, z, ...]` points; output is `[u, v, ...]`.
pub fn project_perspective(points: &[f64], cam: &CameraIntrinsics) -> Result<Vec<f64>> {
    let cam = cam.with_mode(ProjectionMode::Perspective);
    let mut out = Vec::with_capacity(points.len() / 3 * 2);
    for (i, p) in points.chunks_exact(3).enumerate() {
        let uv = cam.project_point([p[0], p[1], p[2]]).map_err(|e| match e {
            Error::DegenerateDepth { z, .. } => Error::DegenerateDepth { index: i, z },
            e => e,
        })?;
        out.extend_from_slice(&uv);
    }
    Ok(out)
}

pub fn project_orthographic(points: &[f64], cam: &CameraIntrinsics) -> Vec<f64> {
    points
        .chunks_exact(3)
        .flat_map(|p| [cam.ortho_scale * p[0] + cam.cx, cam.ortho_scale * p[1] + cam.cy])
        .collect()
}
