//! Surfaces, cameras, rigid alignment and reconstruction error.

mod camera;
mod metric;
mod procrustes;
mod surface;

pub use camera::{project_orthographic, project_perspective, CameraIntrinsics, ProjectionMode, REFERENCE_IMAGE_SIDE};
pub use metric::{e3d_metric, frame_error, mean_and_population_std, mean_laplacian_magnitude, Alignment, E3dReport};
pub use procrustes::{procrustes_align, RigidAlignment};
pub use surface::{flat_grid, grid_area, grid_edge_lengths, SurfaceSequence};

#[cfg(test)]
mod tests;
