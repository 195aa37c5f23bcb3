use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// A sequence of `frames` vertex grids of `grid_side x grid_side` points,
/// stored frame-major as `[F, G, G, 3]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSequence {
    frames: usize,
    grid_side: usize,
    vertices: Vec<f64>,
}

impl SurfaceSequence {
    pub fn new(frames: usize, grid_side: usize, vertices: Vec<f64>) -> Result<Self> {
        if frames == 0 {
            return Err(Error::Parameter("a surface sequence needs at least one frame".into()));
        }
        if grid_side < 2 {
            return Err(Error::Parameter(format!("grid side must be >= 2, got {grid_side}")));
        }
        let expect = frames * grid_side * grid_side * 3;
        if vertices.len() != expect {
            return dim_err(format!(
                "{frames} frames of {grid_side}x{grid_side} vertices need {expect} values, got {}",
                vertices.len()
            ));
        }
        if let Some(i) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("vertex coordinate {i} is not finite")));
        }
        Ok(Self {
            frames,
            grid_side,
            vertices,
        })
    }

    pub fn from_frames(grid_side: usize, frames: &[Vec<f64>]) -> Result<Self> {
        let data = frames.iter().flatten().copied().collect();
        Self::new(frames.len(), grid_side, data)
    }

    /// `[F, G, G, 3]` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [f, g, g2, 3] if g == g2 => Self::new(f, g, t.data().to_vec()),
            ref s => dim_err(format!("expected [F, G, G, 3], got {s:?}")),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.frames, self.grid_side, self.grid_side, 3],
            self.vertices.clone(),
        )
        .expect("validated on construction")
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn grid_side(&self) -> usize {
        self.grid_side
    }

    /// Number of points per frame.
    pub fn points_per_frame(&self) -> usize {
        self.grid_side * self.grid_side
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        let n = self.points_per_frame() * 3;
        &self.vertices[f * n..(f + 1) * n]
    }

    pub fn vertices(&self) -> &[f64] {
        &self.vertices
    }

    pub fn iter_frames(&self) -> impl Iterator<Item = &[f64]> {
        self.vertices.chunks_exact(self.points_per_frame() * 3)
    }

    pub fn same_layout(&self, other: &Self) -> Result<()> {
        if self.frames != other.frames || self.grid_side != other.grid_side {
            return dim_err(format!(
                "surface sequences differ: {}x{}^2 vs {}x{}^2",
                self.frames, self.grid_side, other.frames, other.grid_side
            ));
        }
        Ok(())
    }
}

/// Flat `side x side` grid centered on `(0, 0, depth)` in the `z = depth`
/// plane; row index grows with `y`, column index with `x`.
pub fn flat_grid(grid_side: usize, side_length: f64, depth: f64) -> Vec<f64> {
    let h = side_length / (grid_side - 1) as f64;
    let half = side_length / 2.0;
    let mut out = Vec::with_capacity(grid_side * grid_side * 3);
    for i in 0..grid_side {
        for j in 0..grid_side {
            out.extend_from_slice(&[j as f64 * h - half, i as f64 * h - half, depth]);
        }
    }
    out
}

/// Sum of the areas of the two triangles per grid cell.
pub fn grid_area(points: &[f64], grid_side: usize) -> f64 {
    let p = |i: usize, j: usize| {
        let k = 3 * (i * grid_side + j);
        [points[k], points[k + 1], points[k + 2]]
    };
    let tri = |a: [f64; 3], b: [f64; 3], c: [f64; 3]| {
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let n = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
    };
    let mut area = 0.0;
    for i in 0..grid_side - 1 {
        for j in 0..grid_side - 1 {
            area += tri(p(i, j), p(i, j + 1), p(i + 1, j));
            area += tri(p(i + 1, j), p(i, j + 1), p(i + 1, j + 1));
        }
    }
    area
}

/// Lengths of all horizontal then all vertical grid edges.
pub fn grid_edge_lengths(points: &[f64], grid_side: usize) -> Vec<f64> {
    let dist = |a: usize, b: usize| {
        let (a, b) = (&points[3 * a..3 * a + 3], &points[3 * b..3 * b + 3]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    };
    let g = grid_side;
    let mut out = Vec::with_capacity(2 * g * (g - 1));
    for i in 0..g {
        for j in 0..g - 1 {
            out.push(dist(i * g + j, i * g + j + 1));
        }
    }
    for i in 0..g - 1 {
        for j in 0..g {
            out.push(dist(i * g + j, (i + 1) * g + j));
        }
    }
    out
}
