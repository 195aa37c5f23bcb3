//! Synthetic training data: deforming sheets rendered under several
//! camera poses, lights and textures, tagged into train and test splits.

mod container;
mod deform;
mod noise;
mod render;
mod texture;


use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use container::{read_dataset, write_dataset, DatasetReader, RecordEntry, DATASET_MAGIC, DATASET_VERSION};
pub use deform::{deform_sheet, shape_trajectory, synthesize_deformations, DeformationConfig, ShapeParams};
pub use noise::add_salt_pepper_noise;
pub use render::{render_frame, CameraPose, PointLight, RenderSettings, Shading, ShadingModel};
pub use texture::{Pattern, Texture, TextureSource, TextureSpec};

use crate::error::{Error, Result};
use crate::geometry::{flat_grid, CameraIntrinsics, SurfaceSequence};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Periodic temporal holdout plus one reserved texture and light.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitPattern {
    pub period: usize,
    pub test_len: usize,
    pub holdout_texture: Option<usize>,
    pub holdout_light: Option<usize>,
}

impl Default for SplitPattern {
    fn default() -> Self {
        Self {
            period: 5,
            test_len: 1,
            holdout_texture: Some(3),
            holdout_light: Some(1),
        }
    }
}

impl SplitPattern {
    pub fn validate(&self) -> Result<()> {
        if !(self.period > self.test_len && self.test_len >= 1) {
            return Err(Error::Config(format!(
                "split needs period > test_len >= 1, got period {} and test_len {}",
                self.period, self.test_len
            )));
        }
        Ok(())
    }

    pub fn tag(&self, state: usize, texture: usize, light: usize) -> Split {
        let by_time = state % self.period >= self.period - self.test_len;
        if by_time || self.holdout_texture == Some(texture) || self.holdout_light == Some(light) {
            Split::Test
        } else {
            Split::Train
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub num_states: usize,
    pub grid_side: usize,
    /// Side of the square rest sheet, length units.
    pub side_length: f64,
    /// Distance of the rest sheet from the camera.
    pub depth: f64,
    pub image_side: usize,
    pub texture_side: usize,
    pub poses: Vec<CameraPose>,
    pub lights: Vec<PointLight>,
    pub textures: Vec<TextureSpec>,
    pub shading: Shading,
    pub background: [u8; 3],
    pub deformation: DeformationConfig,
    pub split: SplitPattern,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl SceneConfig {
    /// 200 states, G 17, 64-pixel images, 2 poses, 2 lights, 4 textures.
    pub fn desk() -> Self {
        Self {
            num_states: 200,
            grid_side: 17,
            side_length: 2.0,
            depth: 5.0,
            image_side: 64,
            texture_side: 128,
            poses: vec![
                CameraPose::default(),
                CameraPose {
                    yaw_deg: 20.0,
                    pitch_deg: -12.0,
                },
            ],
            lights: vec![
                PointLight {
                    position: [0.0, 0.0, 0.0],
                    intensity: 1.0,
                },
                PointLight {
                    position: [3.0, -2.5, 2.0],
                    intensity: 1.0,
                },
            ],
            textures: TextureSpec::defaults(),
            shading: Shading::default(),
            background: [40, 44, 52],
            deformation: DeformationConfig::default(),
            split: SplitPattern::default(),
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_states < 2 {
            return Err(Error::Config(format!("num_states must be >= 2, got {}", self.num_states)));
        }
        if self.grid_side < 3 {
            return Err(Error::Config(format!("grid_side must be >= 3, got {}", self.grid_side)));
        }
        if self.image_side < 8 || self.texture_side < 2 {
            return Err(Error::Config("image_side must be >= 8 and texture_side >= 2".into()));
        }
        if !(self.side_length > 0.0 && self.depth > 0.0) {
            return Err(Error::Config("side_length and depth must be positive".into()));
        }
        if self.poses.is_empty() || self.lights.is_empty() || self.textures.is_empty() {
            return Err(Error::Config("need at least one pose, light and texture".into()));
        }
        let mut names: Vec<&str> = self.textures.iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("texture names must be unique".into()));
        }
        if let Some(t) = self.split.holdout_texture.filter(|&t| t >= self.textures.len()) {
            return Err(Error::Config(format!("holdout texture {t} does not exist")));
        }
        if let Some(l) = self.split.holdout_light.filter(|&l| l >= self.lights.len()) {
            return Err(Error::Config(format!("holdout light {l} does not exist")));
        }
        self.split.validate()?;
        self.shading.validate()?;
        self.deformation.validate()
    }

    /// Reference intrinsics scaled to `image_side`.
    pub fn camera(&self) -> CameraIntrinsics {
        CameraIntrinsics::for_image_side(self.image_side)
    }

    /// The undeformed sheet, which is also the network's template.
    pub fn rest_surface(&self) -> Vec<f64> {
        flat_grid(self.grid_side, self.side_length, self.depth)
    }

    pub fn pivot(&self) -> [f64; 3] {
        [0.0, 0.0, self.depth]
    }

    pub fn texture_names(&self) -> Vec<String> {
        self.textures.iter().map(|t| t.name.clone()).collect()
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            image_side: self.image_side,
            camera: self.camera(),
            shading: self.shading,
            background: self.background,
        }
    }

    pub fn build_textures(&self) -> Result<Vec<Texture>> {
        self.textures
            .iter()
            .enumerate()
            .map(|(k, t)| t.build(self.texture_side, self.seed.wrapping_add(k as u64)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub state: usize,
    pub texture: usize,
    pub light: usize,
    pub camera: usize,
    pub split: Split,
    /// Interleaved RGB, `image_side^2 * 3` bytes.
    pub image: Vec<u8>,
    /// `G x G x 3` ground truth in the reference camera frame.
    pub surface: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformationDataset {
    pub scene: SceneConfig,
    pub samples: Vec<Sample>,
}

impl DeformationDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&k| self.samples[k].split == split).collect()
    }

    /// `[N, 3, S, S]` images scaled to `[0, 1]`.
    pub fn image_tensor(&self, indices: &[usize]) -> Result<Tensor> {
        let images: Vec<&[u8]> = indices.iter().map(|&k| self.samples[k].image.as_slice()).collect();
        images_to_tensor(&images, self.scene.image_side)
    }

    /// `[N, G, G, 3]` ground-truth surfaces.
    pub fn surface_tensor(&self, indices: &[usize]) -> Result<Tensor> {
        let g = self.scene.grid_side;
        let data = indices
            .iter()
            .flat_map(|&k| self.samples[k].surface.iter().map(|&v| v as f64))
            .collect();
        Tensor::new(vec![indices.len(), g, g, 3], data)
    }

    /// SHA-256 over every record, independent of file layout.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.samples {
            for v in [s.state, s.texture, s.light, s.camera] {
                h.update((v as u64).to_le_bytes());
            }
            h.update([(s.split == Split::Test) as u8]);
            h.update(&s.image);
            for v in &s.surface {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Converts interleaved 8-bit images into a `[N, 3, S, S]` tensor in `[0, 1]`.
pub fn images_to_tensor(images: &[&[u8]], side: usize) -> Result<Tensor> {
    let plane = side * side;
    let mut data = vec![0.0; images.len() * 3 * plane];
    for (n, img) in images.iter().enumerate() {
        if img.len() != plane * 3 {
            return Err(Error::Dimension(format!(
                "image has {} bytes, expected {side}x{side}x3",
                img.len()
            )));
        }
        for p in 0..plane {
            for c in 0..3 {
                data[(n * 3 + c) * plane + p] = img[3 * p + c] as f64 / 255.0;
            }
        }
    }
    Tensor::new(vec![images.len(), 3, side, side], data)
}

/// Re-tags every sample; fails when either partition ends up empty.
pub fn split_train_test(dataset: &mut DeformationDataset, pattern: &SplitPattern) -> Result<()> {
    pattern.validate()?;
    for s in &mut dataset.samples {
        s.split = pattern.tag(s.state, s.texture, s.light);
    }
    let train = dataset.samples.iter().filter(|s| s.split == Split::Train).count();
    if train == 0 || train == dataset.samples.len() {
        return Err(Error::Config(format!(
            "split leaves {train} train and {} test samples",
            dataset.samples.len() - train
        )));
    }
    dataset.scene.split = *pattern;
    Ok(())
}

/// Synthesizes the deformation sequence, renders every (state, pose,
/// light, texture) combination in that nesting order and tags the split.
pub fn generate_dataset(cfg: &SceneConfig) -> Result<DeformationDataset> {
    cfg.validate()?;
    let surfaces = synthesize_deformations(
        &cfg.deformation,
        cfg.num_states,
        cfg.grid_side,
        cfg.side_length,
        cfg.depth,
        cfg.seed,
    )?;
    let textures = cfg.build_textures()?;
    let settings = cfg.render_settings();
    let combos: Vec<(usize, usize, usize, usize)> = (0..cfg.num_states)
        .flat_map(|s| {
            (0..cfg.poses.len()).flat_map(move |c| {
                (0..cfg.lights.len()).flat_map(move |l| (0..cfg.textures.len()).map(move |t| (s, c, l, t)))
            })
        })
        .collect();
    let samples = combos
        .par_iter()
        .map(|&(state, camera, light, texture)| {
            let frame = surfaces.frame(state);
            let image = render_frame(
                frame,
                cfg.grid_side,
                &cfg.poses[camera],
                cfg.pivot(),
                &cfg.lights[light],
                &textures[texture],
                &settings,
            )?;
            Ok(Sample {
                state,
                texture,
                light,
                camera,
                split: Split::Train,
                image,
                surface: frame.iter().map(|&v| v as f32).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut dataset = DeformationDataset {
        scene: cfg.clone(),
        samples,
    };
    split_train_test(&mut dataset, &cfg.split)?;
    Ok(dataset)
}

/// Ground-truth sequence of the given samples, in order.
pub fn surfaces_of(dataset: &DeformationDataset, indices: &[usize]) -> Result<SurfaceSequence> {
    let g = dataset.scene.grid_side;
    let data = indices
        .iter()
        .flat_map(|&k| dataset.samples[k].surface.iter().map(|&v| v as f64))
        .collect();
    SurfaceSequence::new(indices.len(), g, data)
}
