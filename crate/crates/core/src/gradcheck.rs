//! Central finite-difference verification of graph gradients.
//!
//! Every suite draws random instances of one differentiable operation,
//! reduces its output to a scalar with fixed random weights, and compares
//! the reverse-mode gradient against central differences of the same
//! scalar function.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{flat_grid, CameraIntrinsics};
use crate::losses::{self, LossConfig, RasterMap};
use crate::network::{default_skips, Activation, Model, ModelConfig};
use crate::tensor::{Graph, Tensor, Var};

/// Pass threshold for every suite.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub step: f64,
    /// Check at most this many coordinates per instance, chosen at random.
    pub max_coords: Option<usize>,
    /// Coordinates whose differences at `step` and `step / 2` disagree by
    /// more than this relative amount sit on a kink and are skipped.
    pub kink_tolerance: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords: None,
            kink_tolerance: 1e-6,
        }
    }
}

/// Outcome of comparing analytic and numeric gradients.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientComparison {
    /// `max |a - n| / (|a| + |n|)` over coordinates where `|a| + |n| > 1e-8`.
    pub worst_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl GradientComparison {
    fn merge(&mut self, other: GradientComparison) {
        self.worst_rel_err = self.worst_rel_err.max(other.worst_rel_err);
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Compares `d f / d inputs` from [`Graph::backward`] with central
/// differences. `f` must build a scalar from the given input variables.
pub fn check_gradients<F>(
    inputs: &[Tensor],
    f: F,
    opts: &GradcheckOptions,
    rng: &mut impl Rng,
) -> Result<GradientComparison>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad(v)).collect();
    drop(g);

    let mut coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    if let Some(m) = opts.max_coords {
        if coords.len() > m {
            for k in 0..m {
                let pick = rng.random_range(k..coords.len());
                coords.swap(k, pick);
            }
            coords.truncate(m);
        }
    }

    let mut work = inputs.to_vec();
    let mut central = |i: usize, j: usize, h: f64| -> Result<f64> {
        let x0 = work[i].data()[j];
        work[i].data_mut()[j] = x0 + h;
        let up = evaluate(&f, &work)?;
        work[i].data_mut()[j] = x0 - h;
        let down = evaluate(&f, &work)?;
        work[i].data_mut()[j] = x0;
        Ok((up - down) / (2.0 * h))
    };

    let mut cmp = GradientComparison::default();
    for (i, j) in coords {
        let n1 = central(i, j, opts.step)?;
        let n2 = central(i, j, opts.step / 2.0)?;
        if (n1 - n2).abs() > opts.kink_tolerance * (n1.abs() + n2.abs()) + 1e-9 {
            cmp.skipped += 1;
            continue;
        }
        let a = analytic[i].data()[j];
        let denom = a.abs() + n1.abs();
        if denom > 1e-8 {
            cmp.worst_rel_err = cmp.worst_rel_err.max((a - n1).abs() / denom);
            cmp.checked += 1;
        }
    }
    Ok(cmp)
}

/// Names accepted by [`run_suite`].
pub const OPS: &[&str] = &[
    "conv2d",
    "transposed_conv2d",
    "channel_bias",
    "add_sub",
    "relu",
    "tanh",
    "grid_sample_bilinear",
    "translation_flow",
    "gaussian_blur2d",
    "resize_bilinear",
    "channels_last",
    "frobenius_norm",
    "frobenius_norm_sq",
    "project_perspective",
    "project_orthographic",
    "splat_bilinear",
    "relu_conv2d",
    "loss_3d",
    "loss_iso",
    "loss_contour",
    "network",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub op: String,
    pub trials: usize,
    pub worst_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Checks `op` through a fixed random linear functional of its output.
fn weighted<F>(inputs: Vec<Tensor>, op: F, rng: &mut ChaCha8Rng, opts: &GradcheckOptions) -> Result<GradientComparison>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut probe = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| probe.constant(t.clone())).collect();
    let out = op(&mut probe, &vars)?;
    let w = random_tensor(rng, &probe.shape(out).to_vec(), -1.0, 1.0);
    check_gradients(
        &inputs,
        |g, v| {
            let y = op(g, v)?;
            g.weighted_sum(y, &w)
        },
        opts,
        rng,
    )
}

fn random_surface(rng: &mut ChaCha8Rng, frames: usize, side: usize, noise: f64) -> Tensor {
    let rest = flat_grid(side, 2.0, 5.0);
    let data: Vec<f64> = (0..frames)
        .flat_map(|_| rest.iter().map(|v| v + rng.random_range(-noise..noise)).collect::<Vec<_>>())
        .collect();
    Tensor::new(vec![frames, side, side, 3], data).expect("surface shape")
}

fn one_trial(op: &str, rng: &mut ChaCha8Rng) -> Result<GradientComparison> {
    let opts = GradcheckOptions::default();
    match op {
        "conv2d" => {
            let (c, k) = (rng.random_range(1..4), rng.random_range(1..4));
            let (h, w) = (rng.random_range(3..8), rng.random_range(3..8));
            let stride = rng.random_range(1..3);
            let pad = rng.random_range(0..2);
            let x = random_tensor(rng, &[2, c, h, w], -1.0, 1.0);
            let kern = random_tensor(rng, &[k, c, 3, 3], -1.0, 1.0);
            weighted(vec![x, kern], |g, v| g.conv2d(v[0], v[1], stride, pad), rng, &opts)
        }
        "transposed_conv2d" => {
            let (c, k) = (rng.random_range(1..4), rng.random_range(1..4));
            let (h, w) = (rng.random_range(2..6), rng.random_range(2..6));
            let stride = rng.random_range(1..3);
            let ks = [2, 3][rng.random_range(0..2)];
            let pad = if ks == 3 { rng.random_range(0..2) } else { 0 };
            let x = random_tensor(rng, &[2, k, h, w], -1.0, 1.0);
            let kern = random_tensor(rng, &[k, c, ks, ks], -1.0, 1.0);
            weighted(vec![x, kern], |g, v| g.conv_transpose2d(v[0], v[1], stride, pad), rng, &opts)
        }
        "channel_bias" => {
            let c = rng.random_range(1..4);
            let x = random_tensor(rng, &[2, c, 3, 3], -1.0, 1.0);
            let b = random_tensor(rng, &[c], -1.0, 1.0);
            weighted(vec![x, b], |g, v| g.add_channel_bias(v[0], v[1]), rng, &opts)
        }
        "add_sub" => {
            let a = random_tensor(rng, &[3, 4], -1.0, 1.0);
            let b = random_tensor(rng, &[3, 4], -1.0, 1.0);
            weighted(
                vec![a, b],
                |g, v| {
                    let s = g.add(v[0], v[1])?;
                    let s = g.mul_scalar(s, 1.5);
                    let s = g.add_scalar(s, 0.25);
                    g.sub(s, v[1])
                },
                rng,
                &opts,
            )
        }
        "relu" => {
            let x = random_tensor(rng, &[4, 5], -1.0, 1.0);
            weighted(vec![x], |g, v| Ok(g.relu(v[0])), rng, &opts)
        }
        "tanh" => {
            let x = random_tensor(rng, &[4, 5], -2.0, 2.0);
            weighted(vec![x], |g, v| Ok(g.tanh(v[0])), rng, &opts)
        }
        "grid_sample_bilinear" => {
            let src = random_tensor(rng, &[5, 5], -1.0, 1.0);
            let flow = random_tensor(rng, &[5, 5, 2], -0.5, 4.5);
            weighted(vec![src, flow], |g, v| g.grid_sample_bilinear(v[0], v[1]), rng, &opts)
        }
        "translation_flow" => {
            let side = 7;
            let p = random_tensor(rng, &[2], 0.0, 6.0);
            let src = random_tensor(rng, &[side, side], -1.0, 1.0);
            weighted(
                vec![p, src],
                |g, v| {
                    let flow = g.translation_flow(v[0], side)?;
                    g.grid_sample_bilinear(v[1], flow)
                },
                rng,
                &opts,
            )
        }
        "gaussian_blur2d" => {
            let side = rng.random_range(3..8);
            let sigma = rng.random_range(0.5..2.0);
            let ksize = [3, 5][rng.random_range(0..2)];
            let x = random_tensor(rng, &[side, side, 3], -1.0, 1.0);
            weighted(vec![x], |g, v| g.gaussian_blur2d(v[0], sigma, ksize), rng, &opts)
        }
        "resize_bilinear" => {
            let (h, w) = (rng.random_range(2..7), rng.random_range(2..7));
            let (oh, ow) = (rng.random_range(2..9), rng.random_range(2..9));
            let x = random_tensor(rng, &[1, 2, h, w], -1.0, 1.0);
            weighted(vec![x], |g, v| g.resize_bilinear(v[0], oh, ow), rng, &opts)
        }
        "channels_last" => {
            let x = random_tensor(rng, &[2, 3, 2, 4], -1.0, 1.0);
            weighted(vec![x], |g, v| g.channels_last(v[0]), rng, &opts)
        }
        "frobenius_norm" => {
            let x = Tensor::from_fn(&[3, 4], |_| {
                let m = rng.random_range(0.1..1.0);
                if rng.random_bool(0.5) { m } else { -m }
            });
            check_gradients(&[x], |g, v| Ok(g.frobenius_norm(v[0])), &opts, rng)
        }
        "frobenius_norm_sq" => {
            let x = random_tensor(rng, &[3, 4], -1.0, 1.0);
            check_gradients(&[x], |g, v| Ok(g.frobenius_norm_sq(v[0])), &opts, rng)
        }
        "project_perspective" => {
            let cam = CameraIntrinsics::reference();
            let mut p = random_tensor(rng, &[4, 4, 3], -1.0, 1.0);
            for z in p.data_mut().iter_mut().skip(2).step_by(3) {
                *z = 1.0 + 4.0 * z.abs();
            }
            weighted(vec![p], |g, v| cam.project(g, v[0]), rng, &opts)
        }
        "project_orthographic" => {
            let cam = CameraIntrinsics::orthographic(10.0, 32.0, 32.0)?;
            let p = random_tensor(rng, &[4, 4, 3], -1.0, 1.0);
            weighted(vec![p], |g, v| cam.project(g, v[0]), rng, &opts)
        }
        "splat_bilinear" => {
            let side = 9;
            let n = rng.random_range(1..26);
            let p = random_tensor(rng, &[n, 2], -1.0, side as f64);
            weighted(vec![p], |g, v| g.splat_bilinear(v[0], side, 1.0, 0.0), rng, &opts)
        }
        "relu_conv2d" => {
            let x = random_tensor(rng, &[2, 3, 8, 8], -1.0, 1.0);
            let k1 = random_tensor(rng, &[4, 3, 3, 3], -1.0, 1.0);
            let k2 = random_tensor(rng, &[2, 4, 3, 3], -1.0, 1.0);
            weighted(
                vec![x, k1, k2],
                |g, v| {
                    let y = g.conv2d(v[0], v[1], 1, 1)?;
                    let y = g.relu(y);
                    g.conv2d(y, v[2], 2, 1)
                },
                rng,
                &opts,
            )
        }
        "loss_3d" => {
            let frames = rng.random_range(1..3);
            let pred = random_surface(rng, frames, 4, 0.3);
            let gt = random_surface(rng, frames, 4, 0.3);
            check_gradients(&[pred, gt], |g, v| losses::loss_3d(g, v[0], v[1]), &opts, rng)
        }
        "loss_iso" => {
            let frames = rng.random_range(1..3);
            let pred = random_surface(rng, frames, 5, 0.3);
            let cfg = LossConfig::default();
            check_gradients(&[pred], |g, v| losses::loss_iso(g, v[0], &cfg), &opts, rng)
        }
        "loss_contour" => {
            let frames = rng.random_range(1..3);
            let pred = random_surface(rng, frames, 5, 0.3);
            let gt = random_surface(rng, frames, 5, 0.3);
            let cam = CameraIntrinsics::for_image_side(64);
            let cfg = LossConfig {
                raster_side: 25,
                raster_map: RasterMap::for_image(64, 25),
                ..LossConfig::default()
            };
            check_gradients(
                &[pred],
                |g, v| {
                    let target = g.constant(gt.clone());
                    losses::loss_contour(g, v[0], target, &cam, &cfg)
                },
                &opts,
                rng,
            )
        }
        "network" => {
            let cfg = ModelConfig {
                input_side: 16,
                grid_side: 5,
                widths: vec![4, 8],
                skips: default_skips(2),
                seed: rng.random(),
                activation: Activation::Relu,
                ..ModelConfig::desk()
            };
            let model = Model::build(&cfg)?;
            let image = random_tensor(rng, &[1, 3, 16, 16], 0.0, 1.0);
            let w = random_tensor(rng, &[1, 5, 5, 3], -1.0, 1.0);
            let mut inputs = vec![image];
            inputs.extend(model.parameters().iter().map(|(_, t)| t.clone()));
            let opts = GradcheckOptions {
                max_coords: Some(60),
                ..opts
            };
            check_gradients(
                &inputs,
                |g, v| {
                    let out = model.forward_with(g, v[0], &v[1..])?;
                    g.weighted_sum(out, &w)
                },
                &opts,
                rng,
            )
        }
        other => Err(Error::Parameter(format!("unknown gradcheck op '{other}'"))),
    }
}

/// Runs `trials` random instances of `op`.
pub fn run_suite(op: &str, trials: usize, seed: u64) -> Result<SuiteReport> {
    if !OPS.contains(&op) {
        return Err(Error::Parameter(format!("unknown gradcheck op '{op}'")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fxhash(op));
    let mut total = GradientComparison::default();
    for _ in 0..trials {
        total.merge(one_trial(op, &mut rng)?);
    }
    Ok(SuiteReport {
        op: op.to_string(),
        trials,
        worst_rel_err: total.worst_rel_err,
        checked: total.checked,
        skipped: total.skipped,
        passed: total.checked > 0 && total.worst_rel_err < TOLERANCE,
    })
}

fn fxhash(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

pub fn run_all(trials: usize, seed: u64) -> Result<Vec<SuiteReport>> {
    OPS.iter().map(|op| run_suite(op, trials, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harness_detects_wrong_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_tensor(&mut rng, &[5], -1.0, 1.0);
        // 3 * x has derivative 3, but mul_scalar(2) backpropagates 2
        let cmp = check_gradients(
            &[x],
            |g, v| {
                let y = g.mul_scalar(v[0], 2.0);
                let s = g.sum(y);
                let shift = g.value(v[0]).data().iter().sum::<f64>();
                Ok(g.add_scalar(s, if g.requires_grad(v[0]) { 0.0 } else { shift }))
            },
            &GradcheckOptions::default(),
            &mut rng,
        )
        .unwrap();
        assert!(cmp.worst_rel_err > 0.1);
    }

    #[test]
    fn every_op_passes_a_few_trials() {
        for op in OPS {
            let r = run_suite(op, 3, 42).unwrap();
            assert!(r.passed, "{op}: {r:?}");
        }
    }

    #[test]
    fn unknown_op_is_rejected() {
        assert!(run_suite("softmax", 1, 0).is_err());
    }
}
