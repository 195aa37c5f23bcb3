use nalgebra::{Rotation3, Unit, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn reference() -> CameraIntrinsics {
    CameraIntrinsics::reference()
}

#[test]
fn principal_ray_hits_principal_point() {
    assert_eq!(project_perspective(&[0.0, 0.0, 1.0], &reference()).unwrap(), vec![128.0, 128.0]);
    assert_eq!(project_perspective(&[1.0, 0.0, 2.0], &reference()).unwrap(), vec![268.0, 128.0]);
}

#[test]
fn non_positive_depth_is_rejected() {
    let err = project_perspective(&[0.0, 0.0, 1.0, 1.0, 1.0, 0.0], &reference()).unwrap_err();
    assert!(matches!(err, Error::DegenerateDepth { index: 1, .. }));
}

#[test]
fn orthographic_ignores_depth() {
    let cam = CameraIntrinsics::orthographic(1.0, 128.0, 128.0).unwrap();
    assert_eq!(project_orthographic(&[0.0, 0.0, 7.0], &cam), vec![128.0, 128.0]);
    let cam = CameraIntrinsics::orthographic(10.0, 0.0, 0.0).unwrap();
    assert_eq!(project_orthographic(&[1.0, 2.0, 5.0], &cam), vec![10.0, 20.0]);
    assert_eq!(
        project_orthographic(&[0.3, -0.2, 1.0], &cam),
        project_orthographic(&[0.3, -0.2, 9.0], &cam)
    );
}

#[test]
fn invalid_intrinsics_are_rejected() {
    assert!(CameraIntrinsics::perspective(0.0, 1.0, 0.0, 0.0).is_err());
    assert!(CameraIntrinsics::orthographic(-1.0, 0.0, 0.0).is_err());
}

#[test]
fn graph_projection_matches_plain_projection() {
    let mut g = crate::tensor::Graph::new();
    let pts = vec![0.1, -0.4, 3.0, 0.7, 0.2, 5.5];
    let v = g.constant(crate::tensor::Tensor::new(vec![2, 3], pts.clone()).unwrap());
    let out = reference().project(&mut g, v).unwrap();
    assert_eq!(g.value(out).data(), &project_perspective(&pts, &reference()).unwrap()[..]);
}

#[test]
fn e3d_of_identical_sequences_is_zero() {
    let gt = SurfaceSequence::from_frames(4, &[flat_grid(4, 2.0, 5.0), flat_grid(4, 1.0, 3.0)]).unwrap();
    for a in [Alignment::None, Alignment::Rigid, Alignment::Similarity] {
        let r = e3d_metric(&gt, &gt, a).unwrap();
        assert_eq!((r.e3d, r.sigma), (0.0, 0.0), "{a:?}");
    }
}

#[test]
fn zero_prediction_gives_unit_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frames: Vec<Vec<f64>> = (0..3).map(|_| (0..48).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let gt = SurfaceSequence::from_frames(4, &frames).unwrap();
    let zero = SurfaceSequence::new(3, 4, vec![0.0; 144]).unwrap();
    let r = e3d_metric(&zero, &gt, Alignment::None).unwrap();
    assert!(r.per_frame.iter().all(|&e| e == 1.0));
}

#[test]
fn zero_ground_truth_is_degenerate() {
    let zero = SurfaceSequence::new(1, 3, vec![0.0; 27]).unwrap();
    assert!(matches!(e3d_metric(&zero, &zero, Alignment::None), Err(Error::Degenerate(_))));
}

#[test]
fn population_standard_deviation() {
    let (m, s) = mean_and_population_std(&[1.0, 3.0]);
    assert_eq!((m, s), (2.0, 1.0));
    assert_eq!(mean_and_population_std(&[0.7]).1, 0.0);
}

#[test]
fn mismatched_sequences_are_rejected() {
    let a = SurfaceSequence::new(1, 3, vec![1.0; 27]).unwrap();
    let b = SurfaceSequence::new(1, 4, vec![1.0; 48]).unwrap();
    assert!(matches!(e3d_metric(&a, &b, Alignment::Rigid), Err(Error::Dimension(_))));
}

#[test]
fn sequence_validation() {
    assert!(SurfaceSequence::new(0, 3, vec![]).is_err());
    assert!(SurfaceSequence::new(1, 1, vec![0.0; 3]).is_err());
    assert!(SurfaceSequence::new(1, 2, vec![0.0; 11]).is_err());
    let mut v = vec![0.0; 12];
    v[5] = f64::NAN;
    assert!(SurfaceSequence::new(1, 2, v).is_err());
}

#[test]
fn laplacian_vanishes_on_planes() {
    let flat = flat_grid(7, 2.0, 5.0);
    assert!(mean_laplacian_magnitude(&flat, 7).unwrap() < 1e-12);
    // a tilted plane is still a linear field
    let tilted: Vec<f64> = flat
        .chunks_exact(3)
        .flat_map(|p| [p[0], p[1], p[2] + 0.3 * p[0] - 0.7 * p[1]])
        .collect();
    assert!(mean_laplacian_magnitude(&tilted, 7).unwrap() < 1e-12);
}

#[test]
fn laplacian_of_single_bump() {
    // center of a 5x5 grid moved by d: |4d| at the center, |d| at its four
    // neighbours, over 9 interior vertices
    let d: [f64; 3] = [0.1, -0.2, 0.35];
    let dn = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let mut s = flat_grid(5, 2.0, 5.0);
    for c in 0..3 {
        s[3 * 12 + c] += d[c];
    }
    let got = mean_laplacian_magnitude(&s, 5).unwrap();
    assert!((got - 8.0 * dn / 9.0).abs() < 1e-12);
}

#[test]
fn laplacian_is_translation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let s: Vec<f64> = (0..75).map(|_| rng.random_range(-1.0..1.0)).collect();
    let shifted: Vec<f64> = s.iter().enumerate().map(|(i, v)| v + [3.0, -1.0, 0.5][i % 3]).collect();
    let (a, b) = (mean_laplacian_magnitude(&s, 5).unwrap(), mean_laplacian_magnitude(&shifted, 5).unwrap());
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn grid_helpers() {
    let s = flat_grid(3, 2.0, 1.0);
    assert_eq!(&s[..3], &[-1.0, -1.0, 1.0]);
    assert_eq!(&s[15..18], &[1.0, 0.0, 1.0]);
    assert_eq!(&s[21..24], &[0.0, 1.0, 1.0]);
    assert!((grid_area(&s, 3) - 4.0).abs() < 1e-12);
    let e = grid_edge_lengths(&s, 3);
    assert_eq!(e.len(), 12);
    assert!(e.iter().all(|&l| (l - 1.0).abs() < 1e-12));
}

fn rigid(points: &[f64], axis: [f64; 3], angle: f64, t: [f64; 3], scale: f64) -> Vec<f64> {
    let r = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle);
    points
        .chunks_exact(3)
        .flat_map(|p| {
            let q = r * Vector3::new(p[0], p[1], p[2]) * scale + Vector3::from(t);
            [q.x, q.y, q.z]
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aligned_e3d_ignores_rigid_motion(
        seed in any::<u64>(),
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -3.1f64..3.1,
        t in prop::array::uniform3(-5.0f64..5.0),
        noise in 0.0f64..0.3,
    ) {
        prop_assume!(axis.iter().map(|v| v * v).sum::<f64>() > 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = SurfaceSequence::new(1, 4, (0..48).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let pred: Vec<f64> = gt.vertices().iter().map(|v| v + rng.random_range(-noise..=noise)).collect();
        let base = e3d_metric(&SurfaceSequence::new(1, 4, pred.clone()).unwrap(), &gt, Alignment::Rigid).unwrap();
        let moved = SurfaceSequence::new(1, 4, rigid(&pred, axis, angle, t, 1.0)).unwrap();
        let after = e3d_metric(&moved, &gt, Alignment::Rigid).unwrap();
        prop_assert!((base.e3d - after.e3d).abs() < 1e-8);
    }

    #[test]
    fn similarity_e3d_ignores_scale(
        seed in any::<u64>(),
        angle in -3.1f64..3.1,
        scale in 0.2f64..5.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = SurfaceSequence::new(1, 4, (0..48).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let pred: Vec<f64> = gt.vertices().iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
        let base = e3d_metric(&SurfaceSequence::new(1, 4, pred.clone()).unwrap(), &gt, Alignment::Similarity).unwrap();
        let moved = SurfaceSequence::new(1, 4, rigid(&pred, [0.2, 1.0, -0.4], angle, [1.0, 2.0, 3.0], scale)).unwrap();
        let after = e3d_metric(&moved, &gt, Alignment::Similarity).unwrap();
        prop_assert!((base.e3d - after.e3d).abs() < 1e-8);
    }

    #[test]
    fn procrustes_never_reflects(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (al, _) = procrustes_align(&a, &b, false).unwrap();
        let r = al.rotation_matrix();
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        prop_assert!((r.transpose() * r - nalgebra::Matrix3::identity()).abs().max() < 1e-9);
    }

    #[test]
    fn intrinsics_scale_outputs(
        s in 0.1f64..4.0,
        x in -1.0f64..1.0,
        y in -1.0f64..1.0,
        z in 0.5f64..10.0,
    ) {
        let cam = reference();
        let base = project_perspective(&[x, y, z], &cam).unwrap();
        let scaled = project_perspective(&[x, y, z], &cam.scaled(s)).unwrap();
        prop_assert!((scaled[0] - s * base[0]).abs() < 1e-9 * (1.0 + base[0].abs() * s));
        prop_assert!((scaled[1] - s * base[1]).abs() < 1e-9 * (1.0 + base[1].abs() * s));
    }

    #[test]
    fn orthographic_invariant_to_depth(x in -3.0f64..3.0, y in -3.0f64..3.0, z1 in -9.0f64..9.0, z2 in -9.0f64..9.0) {
        let cam = CameraIntrinsics::orthographic(12.0, 32.0, 32.0).unwrap();
        prop_assert_eq!(project_orthographic(&[x, y, z1], &cam), project_orthographic(&[x, y, z2], &cam));
    }
}
