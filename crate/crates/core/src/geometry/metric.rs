use serde::{Deserialize, Serialize};

use super::procrustes::procrustes_align;
use super::surface::SurfaceSequence;
use crate::error::{dim_err, Error, Result};

/// Registration applied to each predicted frame before measuring error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    None,
    /// Rotation and translation.
    #[default]
    Rigid,
    /// Rotation, translation and uniform scale.
    Similarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E3dReport {
    /// Mean of the per-frame normalized errors.
    pub e3d: f64,
    /// Population standard deviation of the per-frame errors.
    pub sigma: f64,
    pub per_frame: Vec<f64>,
}

/// Normalized error `||gt - pred||_F / ||gt||_F` of one frame.
pub fn frame_error(pred: &[f64], gt: &[f64], alignment: Alignment) -> Result<f64> {
    if pred.len() != gt.len() {
        return dim_err(format!("frame sizes differ: {} vs {}", pred.len(), gt.len()));
    }
    let gt_norm = gt.iter().map(|v| v * v).sum::<f64>().sqrt();
    if gt_norm == 0.0 {
        return Err(Error::Degenerate("ground-truth frame has zero norm".into()));
    }
    let aligned;
    let pred = match alignment {
        // identity is the exact optimum; skip the SVD and its round-off
        _ if pred == gt => pred,
        Alignment::None => pred,
        Alignment::Rigid | Alignment::Similarity => {
            aligned = procrustes_align(pred, gt, alignment == Alignment::Similarity)?.1;
            &aligned
        }
    };
    let diff = pred
        .iter()
        .zip(gt)
        .map(|(p, q)| (q - p) * (q - p))
        .sum::<f64>()
        .sqrt();
    Ok(diff / gt_norm)
}

pub fn mean_and_population_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean per-frame normalized 3D error and its spread.
pub fn e3d_metric(pred: &SurfaceSequence, gt: &SurfaceSequence, alignment: Alignment) -> Result<E3dReport> {
    pred.same_layout(gt)?;
    let per_frame = pred
        .iter_frames()
        .zip(gt.iter_frames())
        .map(|(p, q)| frame_error(p, q, alignment))
        .collect::<Result<Vec<_>>>()?;
    let (e3d, sigma) = mean_and_population_std(&per_frame);
    Ok(E3dReport {
        e3d,
        sigma,
        per_frame,
    })
}

/// Mean norm of the 5-point discrete Laplacian over interior vertices.
pub fn mean_laplacian_magnitude(surface: &[f64], grid_side: usize) -> Result<f64> {
    let g = grid_side;
    if g < 3 {
        return Err(Error::Parameter(format!("laplacian needs grid side >= 3, got {g}")));
    }
    if surface.len() != g * g * 3 {
        return dim_err(format!("expected {} values for a {g}x{g} grid, got {}", g * g * 3, surface.len()));
    }
    let at = |i: usize, j: usize, c: usize| surface[3 * (i * g + j) + c];
    let mut total = 0.0;
    for i in 1..g - 1 {
        for j in 1..g - 1 {
            let sq: f64 = (0..3)
                .map(|c| {
                    let l = 4.0 * at(i, j, c)
                        - at(i - 1, j, c)
                        - at(i + 1, j, c)
                        - at(i, j - 1, c)
                        - at(i, j + 1, c);
                    l * l
                })
                .sum();
            total += sq.sqrt();
        }
    }
    Ok(total / ((g - 2) * (g - 2)) as f64)
}
