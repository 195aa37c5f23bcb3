//! Temporally smooth, nearly isometric deformations of a flat sheet.
//!
//! Each state is a generalized cylinder: a piecewise-linear profile curve
//! with segments of exactly the grid spacing is swept along rulings
//! perpendicular to a bend direction `theta`. The profile turns by the
//! integrated curvature of a bend (constant curvature past a moving axis)
//! and a fold (extra curvature inside a band). A small sinusoidal height
//! field along the profile normal adds waving.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{flat_grid, SurfaceSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeformationConfig {
    /// Largest bend curvature, 1 / length unit.
    pub bend_curvature: f64,
    /// Largest total fold angle, radians.
    pub fold_angle: f64,
    /// Width of the fold band, length units.
    pub fold_width: f64,
    /// Height of the waving field, length units.
    pub wave_amplitude: f64,
    pub wave_length: f64,
    /// Swing of the bend direction around its base angle, radians.
    pub direction_swing: f64,
    /// Sinusoids per parameter trajectory.
    pub harmonics: usize,
    /// States per unit of trajectory time.
    pub states_per_cycle: f64,
    /// Upper bound on any vertex displacement between consecutive states.
    pub max_step: f64,
}

impl Default for DeformationConfig {
    fn default() -> Self {
        Self {
            bend_curvature: 0.9,
            fold_angle: 0.9,
            fold_width: 0.3,
            wave_amplitude: 0.02,
            wave_length: 1.0,
            direction_swing: 0.35,
            harmonics: 3,
            states_per_cycle: 60.0,
            max_step: 0.12,
        }
    }
}

impl DeformationConfig {
    /// All amplitudes zero: every state is the rest grid.
    pub fn rigid() -> Self {
        Self {
            bend_curvature: 0.0,
            fold_angle: 0.0,
            wave_amplitude: 0.0,
            direction_swing: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            self.bend_curvature,
            self.fold_angle,
            self.wave_amplitude,
            self.direction_swing,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("deformation amplitudes must be finite and >= 0".into()));
        }
        if !(self.fold_width > 0.0 && self.wave_length > 0.0 && self.states_per_cycle > 0.0 && self.max_step > 0.0) {
            return Err(Error::Config(
                "fold_width, wave_length, states_per_cycle and max_step must be positive".into(),
            ));
        }
        if self.harmonics == 0 {
            return Err(Error::Config("harmonics must be >= 1".into()));
        }
        Ok(())
    }
}

/// Shape parameters of one state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ShapeParams {
    /// Bend direction in the sheet plane, radians.
    pub theta: f64,
    pub bend: f64,
    /// Profile coordinate where the bend starts.
    pub axis: f64,
    pub fold: f64,
    /// Profile coordinate where the fold band starts.
    pub fold_start: f64,
    pub wave_phase: f64,
    pub wave_direction: f64,
}

/// A smooth scalar trajectory in `[-1, 1]`.
#[derive(Debug, Clone)]
struct Trajectory {
    terms: Vec<(f64, f64, f64)>,
}

impl Trajectory {
    fn random(rng: &mut ChaCha8Rng, harmonics: usize) -> Self {
        let terms: Vec<(f64, f64, f64)> = (0..harmonics)
            .map(|m| {
                let amp = 1.0 / (m as f64 + 1.0);
                let freq = rng.random_range(0.5..1.5) * (m as f64 + 1.0);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (amp, freq, phase)
            })
            .collect();
        Self { terms }
    }

    fn at(&self, t: f64) -> f64 {
        let total: f64 = self.terms.iter().map(|(a, ..)| a).sum();
        self.terms
            .iter()
            .map(|(a, f, p)| a * (std::f64::consts::TAU * f * t + p).sin())
            .sum::<f64>()
            / total
    }
}

/// Builds the deformed `G x G` grid of a sheet with side `side_length`
/// centered on `(0, 0, depth)`.
pub fn deform_sheet(params: &ShapeParams, cfg: &DeformationConfig, grid_side: usize, side_length: f64, depth: f64) -> Vec<f64> {
    let h = side_length / (grid_side - 1) as f64;
    let half = side_length / 2.0;
    let (ct, st) = (params.theta.cos(), params.theta.sin());
    let reach = half * (ct.abs() + st.abs()) + h;

    // profile nodes at s_k = -half + k h, wide enough for any rotation
    let k_lo = -((reach - half) / h).ceil() as i64;
    let k_hi = ((reach + half) / h).ceil() as i64;
    let s_of = |k: i64| -half + k as f64 * h;
    let n = (k_hi - k_lo + 1) as usize;

    let band = |lo: f64, hi: f64, a: f64, b: f64| (hi.min(b) - lo.max(a)).max(0.0);
    let turning: Vec<f64> = (0..n)
        .map(|i| {
            let s = s_of(k_lo + i as i64);
            let (lo, hi) = (s - h / 2.0, s + h / 2.0);
            params.bend * band(lo, hi, params.axis, f64::INFINITY)
                + params.fold / cfg.fold_width * band(lo, hi, params.fold_start, params.fold_start + cfg.fold_width)
        })
        .collect();

    let anchor = (((0.0 - s_of(k_lo)) / h).round() as usize).min(n - 1);
    let mut cumulative = vec![0.0; n];
    let mut acc = 0.0;
    for (c, t) in cumulative.iter_mut().zip(&turning) {
        acc += t;
        *c = acc;
    }
    // angle of the segment from node i to node i + 1
    let seg_angle = |i: usize| cumulative[i] - cumulative[anchor];
    let mut nodes = vec![(0.0, 0.0); n];
    nodes[anchor] = (s_of(k_lo + anchor as i64), 0.0);
    for i in anchor..n - 1 {
        let phi = seg_angle(i);
        nodes[i + 1] = (nodes[i].0 + h * phi.cos(), nodes[i].1 + h * phi.sin());
    }
    for i in (0..anchor).rev() {
        let phi = seg_angle(i);
        nodes[i] = (nodes[i + 1].0 - h * phi.cos(), nodes[i + 1].1 - h * phi.sin());
    }
    // unit normals at nodes, averaged over adjacent segments
    let normals: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let a = if i == 0 { seg_angle(0) } else { seg_angle(i - 1) };
            let b = if i + 1 >= n { seg_angle(n - 2) } else { seg_angle(i) };
            let (mx, my) = ((a.cos() + b.cos()) / 2.0, (a.sin() + b.sin()) / 2.0);
            let len = (mx * mx + my * my).sqrt();
            (-my / len, mx / len)
        })
        .collect();

    let eval = |s: f64| {
        let f = (s - s_of(k_lo)) / h;
        let i = (f.floor().max(0.0) as usize).min(n - 2);
        let t = f - i as f64;
        let phi = seg_angle(i);
        let p = (nodes[i].0 + t * h * phi.cos(), nodes[i].1 + t * h * phi.sin());
        let nx = normals[i].0 * (1.0 - t) + normals[i + 1].0 * t;
        let ny = normals[i].1 * (1.0 - t) + normals[i + 1].1 * t;
        (p, (nx, ny))
    };

    let (cw, sw) = (params.wave_direction.cos(), params.wave_direction.sin());
    let k_wave = std::f64::consts::TAU / cfg.wave_length;
    let mut out = Vec::with_capacity(grid_side * grid_side * 3);
    for p in flat_grid(grid_side, side_length, 0.0).chunks_exact(3) {
        let (x, y) = (p[0], p[1]);
        let s = x * ct + y * st;
        let r = -x * st + y * ct;
        let ((a, up), (na, nup)) = eval(s);
        let wave = cfg.wave_amplitude * (k_wave * (x * cw + y * sw) + params.wave_phase).sin();
        let (a, up) = (a + wave * na, up + wave * nup);
        // in-plane: a along (ct, st), r along (-st, ct); "up" faces the camera
        out.push(a * ct - r * st);
        out.push(a * st + r * ct);
        out.push(depth - up);
    }
    out
}

fn max_displacement(a: &[f64], b: &[f64]) -> f64 {
    a.chunks_exact(3)
        .zip(b.chunks_exact(3))
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
        .fold(0.0, f64::max)
}

/// Parameter trajectories for `num_states` states.
pub fn shape_trajectory(cfg: &DeformationConfig, num_states: usize, side_length: f64, seed: u64, time_scale: f64) -> Vec<ShapeParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traj = || Trajectory::random(&mut rng, cfg.harmonics);
    let (theta, bend, axis, fold, fold_start, wave_dir) = (traj(), traj(), traj(), traj(), traj(), traj());
    let half = side_length / 2.0;
    (0..num_states)
        .map(|i| {
            let t = i as f64 * time_scale / cfg.states_per_cycle;
            ShapeParams {
                theta: cfg.direction_swing * theta.at(t),
                bend: cfg.bend_curvature * bend.at(t),
                axis: 0.8 * half * axis.at(t),
                fold: cfg.fold_angle * fold.at(t),
                fold_start: 0.7 * half * fold_start.at(t) - cfg.fold_width / 2.0,
                wave_phase: std::f64::consts::TAU * t,
                wave_direction: std::f64::consts::PI * wave_dir.at(t),
            }
        })
        .collect()
}

/// Generates `num_states` deformed grids. The trajectory time step is
/// halved until consecutive states respect `max_step`.
pub fn synthesize_deformations(
    cfg: &DeformationConfig,
    num_states: usize,
    grid_side: usize,
    side_length: f64,
    depth: f64,
    seed: u64,
) -> Result<SurfaceSequence> {
    cfg.validate()?;
    if num_states < 2 {
        return Err(Error::Config(format!("num_states must be >= 2, got {num_states}")));
    }
    let mut time_scale = 1.0;
    for _ in 0..30 {
        let frames: Vec<Vec<f64>> = shape_trajectory(cfg, num_states, side_length, seed, time_scale)
            .iter()
            .map(|p| deform_sheet(p, cfg, grid_side, side_length, depth))
            .collect();
        let worst = frames.windows(2).map(|w| max_displacement(&w[0], &w[1])).fold(0.0, f64::max);
        if worst < cfg.max_step {
            return SurfaceSequence::from_frames(grid_side, &frames);
        }
        log::debug!("max step {worst:.4} exceeds {:.4}; halving time step", cfg.max_step);
        time_scale /= 2.0;
    }
    Err(Error::Config(format!(
        "cannot meet max_step {} with the configured amplitudes",
        cfg.max_step
    )))
}
