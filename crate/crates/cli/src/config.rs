//! TOML run configuration. Every section is optional; missing keys take
//! the library defaults and command-line flags override whatever is set.
//!
//! ```toml
//! [scene]          # dataset generation (SceneConfig)
//! num_states = 200
//!
//! [model]          # network shape and init seed (ModelConfig)
//! widths = [16, 32, 64]
//!
//! [train]          # optimization (TrainConfig)
//! epochs = 30
//! optimizer = { kind = "adam", beta1 = 0.9, beta2 = 0.999, eps = 1e-8 }
//!
//! [eval]
//! alignment = "rigid"
//! noise = [0.0, 0.05]
//! noise_seed = 0
//! ```
//!
//! `model.input_side`, `model.grid_side` and `train.loss.raster_map` follow
//! the dataset unless given explicitly.

use std::path::Path;

use hdm_core::losses::RasterMap;
use hdm_core::{Alignment, ModelConfig, SceneConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub alignment: Alignment,
    pub noise: Vec<f64>,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSettings,
    #[serde(skip)]
    explicit: Explicit,
}

/// Keys whose defaults depend on the dataset rather than on the library.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Explicit {
    input_side: bool,
    grid_side: bool,
    raster_map: bool,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
        let has = |section: &str, key: &str| {
            table
                .get(section)
                .and_then(|s| s.as_table())
                .is_some_and(|s| s.contains_key(key))
        };
        let raster_map = table
            .get("train")
            .and_then(|t| t.get("loss"))
            .and_then(|l| l.as_table())
            .is_some_and(|l| l.contains_key("raster_map"));
        let explicit = Explicit {
            input_side: has("model", "input_side"),
            grid_side: has("model", "grid_side"),
            raster_map,
        };
        let mut cfg: Self = table.try_into().map_err(|e: toml::de::Error| e.to_string())?;
        cfg.explicit = explicit;
        Ok(cfg)
    }

    /// Fills dataset-dependent defaults from the scene a dataset was built with.
    pub fn adapt_to(&mut self, scene: &SceneConfig) {
        if !self.explicit.input_side {
            self.model.input_side = scene.image_side;
        }
        if !self.explicit.grid_side {
            self.model.grid_side = scene.grid_side;
        }
        if !self.explicit.raster_map {
            self.train.loss.raster_map = RasterMap::for_image(scene.image_side, self.train.loss.raster_side);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = RunConfig::parse(
            "[scene]\nnum_states = 12\n[train]\nepochs = 3\noptimizer = { kind = \"sgd_momentum\", momentum = 0.5 }\n[eval]\nalignment = \"none\"\n",
        )
        .unwrap();
        assert_eq!(cfg.scene.num_states, 12);
        assert_eq!(cfg.scene.grid_side, SceneConfig::desk().grid_side);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.train.optimizer.name(), "sgd_momentum");
        assert_eq!(cfg.eval.alignment, Alignment::None);
    }

    #[test]
    fn unknown_sections_are_rejected() {
        assert!(RunConfig::parse("[trian]\nepochs = 3\n").is_err());
        assert!(RunConfig::parse("[train]\nepochs = \"many\"\n").is_err());
    }

    #[test]
    fn dataset_shape_fills_unset_model_keys() {
        let scene = SceneConfig {
            image_side: 32,
            grid_side: 9,
            ..SceneConfig::desk()
        };
        let mut cfg = RunConfig::parse("[model]\ngrid_side = 5\n").unwrap();
        cfg.adapt_to(&scene);
        assert_eq!((cfg.model.input_side, cfg.model.grid_side), (32, 5));
        assert_eq!(cfg.train.loss.raster_map, RasterMap::for_image(32, 99));
    }
}
