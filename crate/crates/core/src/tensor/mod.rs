//! Minimal dense tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain value; [`Graph`] records operations on tensors and
//! differentiates a scalar result with respect to every leaf created by
//! [`Graph::leaf`]. Only the operators the network and losses need exist.

mod array;
pub(crate) mod conv;
mod gemm;
mod graph;
pub(crate) mod sample;

pub use array::Tensor;
pub use gemm::Precision;
pub use graph::{Graph, Var};

/// Normalized Gaussian stencil used by [`Graph::gaussian_blur2d`].
pub fn gaussian_stencil(sigma: f64, ksize: usize) -> Vec<f64> {
    sample::gaussian_kernel(sigma, ksize)
}

#[cfg(test)]
mod tests;
