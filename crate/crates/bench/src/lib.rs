//! Fixtures shared by the benchmarks.

use hdm_core::datagen::{generate_dataset, DeformationDataset};
use hdm_core::gradcheck::random_tensor;
use hdm_core::trainer::model_for_scene;
use hdm_core::{Model, ModelConfig, SceneConfig, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(seed: u64, shape: &[usize]) -> Tensor {
    random_tensor(&mut rng(seed), shape, -1.0, 1.0)
}

/// Desk scene reduced to a few states so setup stays fast.
pub fn small_desk_scene() -> SceneConfig {
    SceneConfig {
        num_states: 8,
        ..SceneConfig::desk()
    }
}

pub fn small_desk_dataset() -> DeformationDataset {
    generate_dataset(&small_desk_scene()).expect("desk scene is valid")
}

pub fn desk_model(scene: &SceneConfig) -> Model {
    model_for_scene(&ModelConfig::desk(), scene).expect("desk model matches desk scene")
}
