use std::sync::OnceLock;

use super::*;
use crate::datagen::{generate_dataset, DeformationConfig, SceneConfig};

fn tiny_scene() -> SceneConfig {
    SceneConfig {
        num_states: 10,
        grid_side: 5,
        image_side: 16,
        texture_side: 16,
        ..SceneConfig::desk()
    }
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        input_side: 16,
        grid_side: 5,
        widths: vec![4, 8],
        skips: crate::network::default_skips(2),
        ..ModelConfig::desk()
    }
}

fn dataset() -> &'static DeformationDataset {
    static DS: OnceLock<DeformationDataset> = OnceLock::new();
    DS.get_or_init(|| generate_dataset(&tiny_scene()).unwrap())
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        ..TrainConfig::for_image_side(16)
    }
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let model = model_for_scene(&tiny_model(), &tiny_scene()).unwrap();
    let before = model.parameter_hash();
    for optimizer in [OptimizerKind::default(), OptimizerKind::SgdMomentum { momentum: 0.9 }] {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            optimizer,
            ..quick(2)
        };
        let out = train(model.clone(), dataset(), &cfg).unwrap();
        assert_eq!(out.model.parameter_hash(), before);
        assert_eq!(out.history.len(), 2);
    }
}

#[test]
fn zero_gradient_step_is_a_no_op() {
    let model = Model::build(&tiny_model()).unwrap();
    for kind in [OptimizerKind::default(), OptimizerKind::SgdMomentum { momentum: 0.9 }] {
        let mut params = model.parameters().to_vec();
        let mut opt = Optimizer::new(kind, &params);
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        for _ in 0..3 {
            opt.step(&mut params, &zeros, 0.1, 0.0);
        }
        assert_eq!(params, model.parameters());
    }
}

#[test]
fn sgd_step_matches_hand_computation() {
    let mut params = vec![("w".to_string(), Tensor::new(vec![2], vec![1.0, -2.0]).unwrap())];
    let mut opt = Optimizer::new(OptimizerKind::SgdMomentum { momentum: 0.5 }, &params);
    opt.step(&mut params, &[vec![0.2, 0.4]], 0.1, 0.0);
    opt.step(&mut params, &[vec![0.2, 0.4]], 0.1, 0.0);
    // v1 = g, v2 = 0.5 g + g
    let expect = [1.0 - 0.1 * 0.2 - 0.1 * 0.3, -2.0 - 0.1 * 0.4 - 0.1 * 0.6];
    for (p, e) in params[0].1.data().iter().zip(expect) {
        assert!((p - e).abs() < 1e-15);
    }
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut params = vec![("w".to_string(), Tensor::new(vec![3], vec![0.0; 3]).unwrap())];
    let mut opt = Optimizer::new(OptimizerKind::default(), &params);
    opt.step(&mut params, &[vec![3.0, -0.01, 0.0]], 0.01, 0.0);
    let p = params[0].1.data();
    assert!((p[0] + 0.01).abs() < 1e-9 && (p[1] - 0.01).abs() < 1e-8 && p[2] == 0.0);
    let state = opt.export(&params);
    let names: Vec<&str> = state.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["adam.m.w", "adam.v.w", "steps"]);
}

#[test]
fn overfits_a_single_sample() {
    let ds = dataset();
    let model = model_for_scene(&tiny_model(), &ds.scene).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 1,
        loss: LossConfig::for_image_side(16).with_terms(LossTerms::only_3d()),
        ..TrainConfig::for_image_side(16)
    };
    let out = train_on(model, ds, &[3], &cfg).unwrap();
    let (first, last) = (out.history[0].loss, out.history.last().unwrap().loss);
    assert!(first / last >= 10.0, "loss went from {first} to {last}");
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let model = model_for_scene(&tiny_model(), &tiny_scene()).unwrap();
        train(model, dataset(), &quick(3)).unwrap()
    };
    let (a, b) = (run(), run());
    let losses = |o: &TrainOutcome| o.history.iter().map(|h| (h.loss, h.three_d, h.iso, h.contour)).collect::<Vec<_>>();
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(a.model.parameter_hash(), b.model.parameter_hash());
    assert!(a.history.iter().all(|h| h.three_d > 0.0 && h.iso > 0.0 && h.contour > 0.0));
    let other = train(model_for_scene(&tiny_model(), &tiny_scene()).unwrap(), dataset(), &TrainConfig { seed: 9, ..quick(3) }).unwrap();
    assert_ne!(losses(&a), losses(&other));
}

#[test]
fn non_finite_parameters_diverge() {
    let mut model = model_for_scene(&tiny_model(), &tiny_scene()).unwrap();
    // relu maps NaN to zero, so poison the head, which has no activation
    let head = model.parameters().iter().position(|(n, _)| n == "head.bias").unwrap();
    model.parameters_mut()[head].1.data_mut()[0] = f64::NAN;
    let err = train(model, dataset(), &quick(1)).unwrap_err();
    match err {
        Error::Divergence { epoch, batch, .. } => assert_eq!((epoch, batch), (1, 0)),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn invalid_train_configs() {
    let bad = [
        TrainConfig { epochs: 0, ..quick(1) },
        TrainConfig { batch_size: 0, ..quick(1) },
        TrainConfig { learning_rate: -1.0, ..quick(1) },
        TrainConfig { learning_rate: f64::NAN, ..quick(1) },
        TrainConfig {
            optimizer: OptimizerKind::SgdMomentum { momentum: 1.5 },
            ..quick(1)
        },
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
    }
    let model = Model::build(&ModelConfig::desk()).unwrap();
    assert!(matches!(train(model, dataset(), &quick(1)), Err(Error::ConfigMismatch(_))));
}

#[test]
fn oracle_model_scores_zero() {
    // a rigid scene keeps every state at the rest grid, which a zero head
    // reproduces exactly through the template
    let scene = SceneConfig {
        deformation: DeformationConfig::rigid(),
        ..tiny_scene()
    };
    let ds = generate_dataset(&scene).unwrap();
    let mut model = model_for_scene(&tiny_model(), &scene).unwrap();
    model.zero_layer("head");
    let r = evaluate(&model, &ds, Split::Test, Alignment::None).unwrap();
    assert_eq!(r.e3d, 0.0);
    assert!(r.per_texture.iter().chain(&r.per_light).all(|g| g.e3d == 0.0));
    assert_eq!(r.losses.three_d, 0.0);
}

#[test]
fn group_means_recombine_to_overall() {
    let model = model_for_scene(&tiny_model(), &tiny_scene()).unwrap();
    let before = model.parameter_hash();
    let r = evaluate(&model, dataset(), Split::Test, Alignment::Rigid).unwrap();
    assert_eq!(model.parameter_hash(), before);
    for rows in [&r.per_texture, &r.per_light] {
        let frames: usize = rows.iter().map(|g| g.frames).sum();
        assert_eq!(frames, r.frames);
        let weighted: f64 = rows.iter().map(|g| g.e3d * g.frames as f64).sum::<f64>() / frames as f64;
        assert!((weighted - r.e3d).abs() < 1e-12);
    }
    // tables list exactly the ids present in the test split
    let mut textures: Vec<usize> = dataset().indices(Split::Test).iter().map(|&k| dataset().samples[k].texture).collect();
    textures.sort_unstable();
    textures.dedup();
    assert_eq!(r.per_texture.iter().map(|g| g.id).collect::<Vec<_>>(), textures);
    assert_eq!(r.per_texture[3].name, "carpet");
    assert!(r.ms_per_frame > 0.0 && r.ms_per_frame.is_finite());
    assert!(r.laplacian > 0.0);
    assert!(r.e3d > 0.0 && r.e3d.is_finite());
    let csv = r.csv();
    assert_eq!(csv.lines().count(), 1 + 1 + r.per_texture.len() + r.per_light.len());
}

#[test]
fn noise_sweep_contract() {
    let model = model_for_scene(&tiny_model(), &tiny_scene()).unwrap();
    let plain = evaluate(&model, dataset(), Split::Test, Alignment::Rigid).unwrap();
    let sweep = noise_sweep(&model, dataset(), &[0.0, 0.1, 0.5], 3, Alignment::Rigid).unwrap();
    assert_eq!(sweep.len(), 3);
    assert!((sweep[0].e3d - plain.e3d).abs() < 1e-12);
    assert_ne!(sweep[2].e3d, sweep[0].e3d);
    let again = noise_sweep(&model, dataset(), &[0.0, 0.1, 0.5], 3, Alignment::Rigid).unwrap();
    assert_eq!(sweep, again);
    assert!(noise_sweep(&model, dataset(), &[0.2, 0.1], 3, Alignment::Rigid).is_err());
    assert!(noise_sweep(&model, dataset(), &[0.0, 1.2], 3, Alignment::Rigid).is_err());
    assert_eq!(NoisePoint::csv(&sweep).lines().count(), 4);
}

#[test]
fn ablation_shares_initial_parameters() {
    let combos = [LossTerms::only_3d(), LossTerms::parse("3d,iso").unwrap()];
    let rows = ablation_run(dataset(), &combos, &tiny_model(), &quick(1), Alignment::Rigid).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].init_hash, rows[1].init_hash);
    assert_eq!(rows[0].init_hash, model_for_scene(&tiny_model(), &tiny_scene()).unwrap().parameter_hash());
    assert_eq!((rows[0].label.as_str(), rows[1].label.as_str()), ("3D", "3D+Iso."));
    assert!(rows.iter().all(|r| r.e3d.is_finite() && r.laplacian.is_finite() && r.final_loss.is_finite()));
    assert_eq!(AblationRow::csv(&rows).lines().count(), 3);
    let no_3d = LossTerms::parse("iso").unwrap();
    assert!(matches!(
        ablation_run(dataset(), &[no_3d], &tiny_model(), &quick(1), Alignment::Rigid),
        Err(Error::Config(_))
    ));
}

#[test]
fn history_csv_has_one_row_per_epoch() {
    let out = train(model_for_scene(&tiny_model(), &tiny_scene()).unwrap(), dataset(), &TrainConfig { eval_every: 1, ..quick(2) }).unwrap();
    let csv = EpochStats::csv(&out.history);
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with(EpochStats::CSV_HEADER));
    assert!(out.history.iter().all(|h| h.test_e3d.is_some()));
    assert_eq!(out.optimizer.steps(), 2 * 6);
}
