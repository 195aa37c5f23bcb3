//! Least-squares rigid and similarity alignment of corresponding point sets.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

/// `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidAlignment {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub scale: f64,
}

impl RigidAlignment {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.rotation[r][c])
    }

    pub fn apply(&self, points: &[f64]) -> Vec<f64> {
        let r = self.rotation_matrix() * self.scale;
        let t = Vector3::from(self.translation);
        points
            .chunks_exact(3)
            .flat_map(|p| {
                let q = r * Vector3::new(p[0], p[1], p[2]) + t;
                [q.x, q.y, q.z]
            })
            .collect()
    }
}

fn centroid(points: &[f64]) -> Vector3<f64> {
    let n = (points.len() / 3) as f64;
    points
        .chunks_exact(3)
        .fold(Vector3::zeros(), |acc, p| acc + Vector3::new(p[0], p[1], p[2]))
        / n
}

/// Aligns `pred` onto `gt` (flat `[x, y, z, ...]` arrays) by centroid
/// subtraction and SVD of the cross-covariance, with the reflection case
/// corrected so the rotation always has determinant +1.
pub fn procrustes_align(pred: &[f64], gt: &[f64], allow_scale: bool) -> Result<(RigidAlignment, Vec<f64>)> {
    if pred.len() != gt.len() || pred.len() % 3 != 0 || pred.is_empty() {
        return dim_err(format!(
            "procrustes needs equal-sized 3D point sets, got {} and {} values",
            pred.len(),
            gt.len()
        ));
    }
    if pred.iter().chain(gt).any(|v| !v.is_finite()) {
        return Err(Error::Parameter("procrustes input contains non-finite values".into()));
    }
    let cp = centroid(pred);
    let cg = centroid(gt);
    let mut cov = Matrix3::zeros();
    let mut pred_var = 0.0;
    let mut gt_var = 0.0;
    for (p, q) in pred.chunks_exact(3).zip(gt.chunks_exact(3)) {
        let x = Vector3::new(p[0], p[1], p[2]) - cp;
        let y = Vector3::new(q[0], q[1], q[2]) - cg;
        cov += y * x.transpose();
        pred_var += x.norm_squared();
        gt_var += y.norm_squared();
    }
    let gt_scale = cg.norm().max(1.0);
    if gt_var.sqrt() <= 1e-12 * gt_scale {
        return Err(Error::Degenerate("ground-truth points are all identical".into()));
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let d = if (u * v_t).determinant() < 0.0 { -1.0 } else { 1.0 };
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rot = u * correction * v_t;

    // singular values come sorted in decreasing order
    let sv = svd.singular_values;
    let scale = if allow_scale && pred_var > 0.0 {
        (sv[0] + sv[1] + d * sv[2]) / pred_var
    } else {
        1.0
    };
    let t = cg - rot * cp * scale;
    let alignment = RigidAlignment {
        rotation: [
            [rot[(0, 0)], rot[(0, 1)], rot[(0, 2)]],
            [rot[(1, 0)], rot[(1, 1)], rot[(1, 2)]],
            [rot[(2, 0)], rot[(2, 1)], rot[(2, 2)]],
        ],
        translation: [t.x, t.y, t.z],
        scale,
    };
    let aligned = alignment.apply(pred);
    Ok((alignment, aligned))
}
