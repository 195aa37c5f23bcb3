//! Monocular reconstruction of deforming surfaces from single images.
//!
//! The crate is organized bottom-up: [`tensor`] provides the autodiff
//! engine, [`geometry`] the surface and camera model, [`losses`] the
//! training objectives, [`network`] the encoder-decoder, [`datagen`] the
//! synthetic dataset, and [`trainer`] the optimization and evaluation
//! loops. [`gradcheck`] verifies every gradient by finite differences.

pub mod datagen;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod losses;
pub mod network;
pub mod tensor;
pub mod trainer;

pub use datagen::{DeformationDataset, SceneConfig, Split};
pub use error::{Error, Result};
pub use geometry::{e3d_metric, Alignment, CameraIntrinsics, E3dReport, ProjectionMode, SurfaceSequence};
pub use losses::{LossConfig, LossTerms};
pub use network::{Checkpoint, Model, ModelConfig};
pub use tensor::{Graph, Precision, Tensor, Var};
pub use trainer::{EvalReport, TrainConfig};
