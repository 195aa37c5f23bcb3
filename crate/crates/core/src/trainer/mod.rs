//! Optimization loop, evaluation, noise sweeps and loss ablations.

mod optim;
mod report;

#[cfg(test)]
mod tests;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use optim::{Optimizer, OptimizerKind};
pub use report::{AblationRow, EpochStats, EvalReport, GroupRow, NoisePoint};

use crate::datagen::{add_salt_pepper_noise, images_to_tensor, DeformationDataset, SceneConfig, Split};
use crate::error::{Error, Result};
use crate::geometry::{frame_error, mean_and_population_std, mean_laplacian_magnitude, Alignment};
use crate::losses::{total_loss, LossBreakdown, LossConfig, LossTerms};
use crate::network::{Model, ModelConfig};
use crate::tensor::{Graph, Precision, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub loss: LossConfig,
    /// Evaluate the test split every this many epochs; 0 disables.
    pub eval_every: usize,
    pub seed: u64,
    pub precision: Precision,
    /// L2 penalty added to every gradient; off by default.
    pub weight_decay: f64,
    /// Learning rate multiplier applied after every epoch; 1 disables.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            loss: LossConfig::default(),
            eval_every: 0,
            seed: 0,
            precision: Precision::F64,
            weight_decay: 0.0,
            lr_decay: 1.0,
        }
    }
}

impl TrainConfig {
    /// Defaults with the loss configured for `image_side` pixel images.
    pub fn for_image_side(image_side: usize) -> Self {
        Self {
            loss: LossConfig::for_image_side(image_side),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.lr_decay > 0.0) {
            return Err(Error::Config("weight_decay must be >= 0 and lr_decay > 0".into()));
        }
        self.optimizer.validate()?;
        self.loss.validate()
    }
}

/// A model built for a scene: its template is the scene's rest sheet.
pub fn model_for_scene(cfg: &ModelConfig, scene: &SceneConfig) -> Result<Model> {
    if cfg.grid_side != scene.grid_side || cfg.input_side != scene.image_side {
        return Err(Error::ConfigMismatch(format!(
            "model expects {}px images and G {}, dataset has {}px and G {}",
            cfg.input_side, cfg.grid_side, scene.image_side, scene.grid_side
        )));
    }
    let mut model = Model::build(cfg)?;
    let g = scene.grid_side;
    model.set_template(Tensor::new(vec![g, g, 3], scene.rest_surface())?)?;
    Ok(model)
}

fn check_compatible(model: &Model, dataset: &DeformationDataset) -> Result<()> {
    let (m, s) = (model.config(), &dataset.scene);
    if m.grid_side != s.grid_side || m.input_side != s.image_side {
        return Err(Error::ConfigMismatch(format!(
            "model expects {}px images and G {}, dataset has {}px and G {}",
            m.input_side, m.grid_side, s.image_side, s.grid_side
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochStats>,
    pub optimizer: Optimizer,
}

impl TrainOutcome {
    pub fn optimizer_state(&self) -> Vec<(String, Tensor)> {
        self.optimizer.export(self.model.parameters())
    }
}

/// Trains on the dataset's train split.
pub fn train(model: Model, dataset: &DeformationDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let indices = dataset.indices(Split::Train);
    train_on(model, dataset, &indices, cfg)
}

/// Trains on the given sample indices. A batch whose predictions reach
/// behind the camera trains without the contour term (or is skipped with
/// a warning if nothing else is enabled); a non-finite output, loss or
/// gradient aborts with [`Error::Divergence`].
pub fn train_on(mut model: Model, dataset: &DeformationDataset, indices: &[usize], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_compatible(&model, dataset)?;
    if indices.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    model.set_precision(cfg.precision);
    let cam = dataset.scene.camera();
    let mut optimizer = Optimizer::new(cfg.optimizer, model.parameters());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = indices.to_vec();
    let mut lr = cfg.learning_rate;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut sums = LossBreakdown::default();
        let (mut frames, mut skipped, mut contour_dropped) = (0usize, 0usize, 0usize);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let images = dataset.image_tensor(chunk)?;
            let gt = dataset.surface_tensor(chunk)?;
            let mut g = Graph::with_precision(cfg.precision);
            let x = g.constant(images);
            let (pred, params) = model.forward(&mut g, x)?;
            if g.value(pred).data().iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    batch,
                    detail: "network output is not finite".into(),
                });
            }
            let gt = g.constant(gt);
            let (loss, parts) = match total_loss(&mut g, pred, gt, &cam, &cfg.loss) {
                Ok(v) => v,
                Err(Error::DegenerateDepth { index, z }) => {
                    // the contour term cannot project points behind the
                    // camera; train this batch on the remaining terms
                    let rest = LossTerms {
                        contour: false,
                        ..cfg.loss.terms
                    };
                    if !(rest.three_d || rest.iso) {
                        log::warn!("epoch {epoch} batch {batch}: predicted point {index} has z = {z}; batch skipped");
                        skipped += 1;
                        continue;
                    }
                    log::debug!("epoch {epoch} batch {batch}: predicted point {index} has z = {z}; contour term dropped");
                    contour_dropped += 1;
                    total_loss(&mut g, pred, gt, &cam, &cfg.loss.with_terms(rest))?
                }
                Err(e) => return Err(e),
            };
            if !parts.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch,
                    detail: format!("loss is {} (3d {}, iso {}, contour {})", parts.total, parts.three_d, parts.iso, parts.contour),
                });
            }
            g.backward(loss)?;
            let grads: Vec<Vec<f64>> = params.iter().map(|&p| g.grad(p).into_data()).collect();
            if let Some(k) = grads.iter().position(|gr| gr.iter().any(|v| !v.is_finite())) {
                return Err(Error::Divergence {
                    epoch,
                    batch,
                    detail: format!("non-finite gradient for {}", model.parameters()[k].0),
                });
            }
            optimizer.step(model.parameters_mut(), &grads, lr, cfg.weight_decay);
            let n = chunk.len() as f64;
            sums.total += parts.total * n;
            sums.three_d += parts.three_d * n;
            sums.iso += parts.iso * n;
            sums.contour += parts.contour * n;
            frames += chunk.len();
        }
        let denom = frames.max(1) as f64;
        let test_e3d = if cfg.eval_every > 0 && epoch % cfg.eval_every == 0 && !dataset.indices(Split::Test).is_empty() {
            Some(evaluate(&model, dataset, Split::Test, Alignment::Rigid)?.e3d)
        } else {
            None
        };
        let stats = EpochStats {
            epoch,
            loss: sums.total / denom,
            three_d: sums.three_d / denom,
            iso: sums.iso / denom,
            contour: sums.contour / denom,
            learning_rate: lr,
            skipped_batches: skipped,
            contour_dropped,
            seconds: started.elapsed().as_secs_f64(),
            test_e3d,
        };
        log::info!(
            "epoch {epoch}/{}: loss {:.6} (3d {:.6} iso {:.6} contour {:.6}) in {:.1}s",
            cfg.epochs,
            stats.loss,
            stats.three_d,
            stats.iso,
            stats.contour,
            stats.seconds
        );
        history.push(stats);
        lr *= cfg.lr_decay;
    }
    Ok(TrainOutcome {
        model,
        history,
        optimizer,
    })
}

/// Per-sample inputs for evaluation, optionally corrupted by noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub fraction: f64,
    pub seed: u64,
}

/// Seed for sample `index` derived from a sweep seed.
fn sample_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Predictions one frame at a time with per-frame wall time in seconds.
fn predict_each(model: &Model, dataset: &DeformationDataset, indices: &[usize], noise: Option<NoiseSpec>) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let side = dataset.scene.image_side;
    let mut preds = Vec::with_capacity(indices.len());
    let mut times = Vec::with_capacity(indices.len());
    for &k in indices {
        let image = match noise {
            Some(n) => add_salt_pepper_noise(&dataset.samples[k].image, 3, n.fraction, sample_seed(n.seed, k))?,
            None => dataset.samples[k].image.clone(),
        };
        let x = images_to_tensor(&[&image], side)?;
        let started = Instant::now();
        let out = model.predict(&x)?;
        times.push(started.elapsed().as_secs_f64());
        preds.push(out.into_data());
    }
    Ok((preds, times))
}

fn group_rows(ids: &[usize], names: &[String], errors: &[f64]) -> Vec<GroupRow> {
    let mut present: Vec<usize> = ids.to_vec();
    present.sort_unstable();
    present.dedup();
    present
        .into_iter()
        .map(|id| {
            let errs: Vec<f64> = ids.iter().zip(errors).filter(|(i, _)| **i == id).map(|(_, e)| *e).collect();
            let (e3d, sigma) = mean_and_population_std(&errs);
            GroupRow {
                id,
                name: names.get(id).cloned().unwrap_or_else(|| id.to_string()),
                frames: errs.len(),
                e3d,
                sigma,
            }
        })
        .collect()
}

/// Evaluation with the scene's default loss configuration for the
/// per-term breakdown.
pub fn evaluate(model: &Model, dataset: &DeformationDataset, split: Split, alignment: Alignment) -> Result<EvalReport> {
    evaluate_with(model, dataset, split, alignment, &LossConfig::for_image_side(dataset.scene.image_side), None)
}

/// Runs every sample of `split` through the model one frame at a time,
/// scoring each frame against its ground truth.
pub fn evaluate_with(
    model: &Model,
    dataset: &DeformationDataset,
    split: Split,
    alignment: Alignment,
    loss: &LossConfig,
    noise: Option<NoiseSpec>,
) -> Result<EvalReport> {
    check_compatible(model, dataset)?;
    let indices = dataset.indices(split);
    if indices.is_empty() {
        return Err(Error::Config(format!("{split:?} split is empty")));
    }
    let g = dataset.scene.grid_side;
    let (preds, times) = predict_each(model, dataset, &indices, noise)?;
    let mut errors = Vec::with_capacity(indices.len());
    let mut laplacian = 0.0;
    let mut sums = LossBreakdown::default();
    let cam = dataset.scene.camera();
    for (pred, &k) in preds.iter().zip(&indices) {
        let gt: Vec<f64> = dataset.samples[k].surface.iter().map(|&v| v as f64).collect();
        errors.push(frame_error(pred, &gt, alignment)?);
        laplacian += mean_laplacian_magnitude(pred, g)?;
        let mut graph = Graph::new();
        let p = graph.constant(Tensor::new(vec![1, g, g, 3], pred.clone())?);
        let t = graph.constant(Tensor::new(vec![1, g, g, 3], gt)?);
        let parts = match total_loss(&mut graph, p, t, &cam, loss) {
            Ok((_, parts)) => parts,
            Err(Error::DegenerateDepth { .. }) => LossBreakdown {
                total: f64::INFINITY,
                ..LossBreakdown::default()
            },
            Err(e) => return Err(e),
        };
        sums.total += parts.total;
        sums.three_d += parts.three_d;
        sums.iso += parts.iso;
        sums.contour += parts.contour;
    }
    let n = indices.len() as f64;
    let (e3d, sigma) = mean_and_population_std(&errors);
    // the first call warms caches and allocator; report the steady state
    let steady = if times.len() > 1 { &times[1..] } else { &times[..] };
    let ms_per_frame = 1e3 * steady.iter().sum::<f64>() / steady.len() as f64;
    let textures: Vec<usize> = indices.iter().map(|&k| dataset.samples[k].texture).collect();
    let lights: Vec<usize> = indices.iter().map(|&k| dataset.samples[k].light).collect();
    let light_names: Vec<String> = (0..dataset.scene.lights.len()).map(|l| format!("light{l}")).collect();
    Ok(EvalReport {
        split,
        alignment,
        frames: indices.len(),
        e3d,
        sigma,
        per_frame: errors.clone(),
        per_texture: group_rows(&textures, &dataset.scene.texture_names(), &errors),
        per_light: group_rows(&lights, &light_names, &errors),
        losses: LossBreakdown {
            total: sums.total / n,
            three_d: sums.three_d / n,
            iso: sums.iso / n,
            contour: sums.contour / n,
        },
        laplacian: laplacian / n,
        ms_per_frame,
        noise_fraction: noise.map_or(0.0, |s| s.fraction),
    })
}

/// e3d of the test split under increasing salt-and-pepper corruption.
pub fn noise_sweep(model: &Model, dataset: &DeformationDataset, fractions: &[f64], seed: u64, alignment: Alignment) -> Result<Vec<NoisePoint>> {
    if fractions.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Parameter("noise fractions must be sorted ascending".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::Parameter(format!("noise fraction {f} is outside [0, 1]")));
    }
    let loss = LossConfig::for_image_side(dataset.scene.image_side);
    fractions
        .iter()
        .map(|&fraction| {
            let r = evaluate_with(model, dataset, Split::Test, alignment, &loss, Some(NoiseSpec { fraction, seed }))?;
            Ok(NoisePoint {
                fraction,
                e3d: r.e3d,
                sigma: r.sigma,
            })
        })
        .collect()
}

/// Trains one model per loss combination from identical initial
/// parameters and scores each on the test split.
pub fn ablation_run(
    dataset: &DeformationDataset,
    combos: &[LossTerms],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    alignment: Alignment,
) -> Result<Vec<AblationRow>> {
    if let Some(c) = combos.iter().find(|c| !c.three_d) {
        return Err(Error::Config(format!("ablation combo {} lacks the 3D term", c.label())));
    }
    let init = model_for_scene(model_cfg, &dataset.scene)?;
    let init_hash = init.parameter_hash();
    combos
        .iter()
        .map(|&terms| {
            let combo_cfg = TrainConfig {
                loss: cfg.loss.with_terms(terms),
                ..cfg.clone()
            };
            let model = init.clone();
            let start_hash = model.parameter_hash();
            let outcome = train(model, dataset, &combo_cfg)?;
            let report = evaluate(&outcome.model, dataset, Split::Test, alignment)?;
            log::info!("ablation {}: e3d {:.5} laplacian {:.6}", terms.label(), report.e3d, report.laplacian);
            Ok(AblationRow {
                label: terms.label(),
                flags: terms.flags(),
                init_hash: start_hash,
                e3d: report.e3d,
                sigma: report.sigma,
                laplacian: report.laplacian,
                final_loss: outcome.history.last().map_or(f64::NAN, |h| h.loss),
            })
        })
        .collect::<Result<Vec<_>>>()
        .inspect(|rows| debug_assert!(rows.iter().all(|r| r.init_hash == init_hash)))
}
