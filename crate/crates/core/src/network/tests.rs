use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{check_gradients, random_tensor, GradcheckOptions};

fn tiny() -> ModelConfig {
    ModelConfig {
        input_side: 16,
        grid_side: 5,
        widths: vec![4, 8],
        skips: default_skips(2),
        ..ModelConfig::desk()
    }
}

fn image(seed: u64, side: usize) -> Tensor {
    random_tensor(&mut ChaCha8Rng::seed_from_u64(seed), &[1, 3, side, side], 0.0, 1.0)
}

#[test]
fn desk_model_output_shape() {
    let model = Model::build(&ModelConfig::desk()).unwrap();
    let out = model.predict(&image(1, 64)).unwrap();
    assert_eq!(out.shape(), &[1, 17, 17, 3]);
    assert!(out.data().iter().all(|v| v.is_finite()));
    let batch = Tensor::from_fn(&[3, 3, 64, 64], |i| (i % 7) as f64 / 7.0);
    assert_eq!(model.predict(&batch).unwrap().shape(), &[3, 17, 17, 3]);
}

#[test]
fn full_scale_model_latent_shape() {
    let cfg = ModelConfig::full_scale();
    let model = Model::build(&cfg).unwrap();
    let latent = model.encode(&image(2, 224)).unwrap();
    assert_eq!(latent.shape(), &[1, 128, 28, 28]);
    assert_eq!(cfg.decoder_side(), 112);
    let again = Model::build(&cfg).unwrap();
    assert_eq!(model.parameter_count(), again.parameter_count());
    // 3x3 convolutions and 2x2 up-convolutions with biases, summed per layer
    assert_eq!(model.parameter_count(), 375_107);
}

#[test]
fn same_seed_same_parameters() {
    let a = Model::build(&ModelConfig::desk()).unwrap();
    let b = Model::build(&ModelConfig::desk()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.parameter_hash(), b.parameter_hash());
    let c = Model::build(&ModelConfig { seed: 1, ..ModelConfig::desk() }).unwrap();
    assert_ne!(a.parameter_hash(), c.parameter_hash());
}

#[test]
fn zero_head_outputs_bias_plus_template() {
    let mut model = Model::build(&tiny()).unwrap();
    model.zero_layer("head");
    for (name, t) in model.parameters_mut() {
        if name == "head.bias" {
            t.data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        }
    }
    let template = Tensor::from_fn(&[5, 5, 3], |i| i as f64 * 0.01);
    model.set_template(template.clone()).unwrap();
    let out = model.predict(&Tensor::zeros(&[1, 3, 16, 16])).unwrap();
    for (k, v) in out.data().iter().enumerate() {
        let expect = template.data()[k] + [0.5, -1.0, 2.0][k % 3];
        assert!((v - expect).abs() < 1e-15);
    }
}

#[test]
fn skips_change_the_output() {
    let with = Model::build(&tiny()).unwrap();
    let without = Model::build(&tiny().without_skips()).unwrap();
    assert_eq!(with.parameters(), without.parameters());
    let x = image(3, 16);
    let (a, b) = (with.predict(&x).unwrap(), without.predict(&x).unwrap());
    let diff = a.data().iter().zip(b.data()).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
    assert!(diff > 1e-6);
}

#[test]
fn identity_network_is_affine() {
    let cfg = ModelConfig {
        activation: Activation::Identity,
        ..tiny().without_skips()
    };
    let mut model = Model::build(&cfg).unwrap();
    for (name, t) in model.parameters_mut() {
        if name.ends_with("bias") {
            let n = t.len();
            t.data_mut().copy_from_slice(&(0..n).map(|i| 0.1 * i as f64).collect::<Vec<_>>());
        }
    }
    let x = image(4, 16);
    let a = 2.7;
    let fx = model.predict(&x).unwrap();
    let fax = model.predict(&x.map(|v| a * v)).unwrap();
    let f0 = model.predict(&Tensor::zeros(&[1, 3, 16, 16])).unwrap();
    for ((p, q), z) in fax.data().iter().zip(fx.data()).zip(f0.data()) {
        assert!((p - (a * q - (a - 1.0) * z)).abs() < 1e-9 * (1.0 + p.abs()));
    }
}

#[test]
fn has_no_fully_connected_layers() {
    let model = Model::build(&ModelConfig::desk()).unwrap();
    let layers = model.layers();
    assert!(layers
        .iter()
        .all(|l| matches!(l.kind, LayerKind::Conv | LayerKind::TransposedConv | LayerKind::BilinearResize)));
    assert_eq!(layers.iter().filter(|l| l.kind == LayerKind::TransposedConv).count(), 2);
    for (name, t) in model.parameters() {
        assert!(name.ends_with("bias") || t.rank() == 4, "{name} is not a convolution kernel");
    }
}

#[test]
fn end_to_end_gradient() {
    let model = Model::build(&tiny()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = image(6, 16);
    let w = random_tensor(&mut rng, &[1, 5, 5, 3], -1.0, 1.0);
    let mut inputs = vec![x];
    inputs.extend(model.parameters().iter().map(|(_, t)| t.clone()));
    let opts = GradcheckOptions {
        max_coords: Some(300),
        ..GradcheckOptions::default()
    };
    let cmp = check_gradients(
        &inputs,
        |g, v| {
            let out = model.forward_with(g, v[0], &v[1..])?;
            g.weighted_sum(out, &w)
        },
        &opts,
        &mut rng,
    )
    .unwrap();
    assert!(cmp.checked > 100);
    assert!(cmp.worst_rel_err < 1e-4, "{cmp:?}");
}

#[test]
fn invalid_configs_are_rejected() {
    let bad_skip = ModelConfig {
        skips: vec![(0, 0)],
        ..ModelConfig::desk()
    };
    assert!(matches!(Model::build(&bad_skip), Err(Error::Config(_))));
    let bad_side = ModelConfig {
        input_side: 60,
        ..ModelConfig::desk()
    };
    assert!(matches!(Model::build(&bad_side), Err(Error::Config(_))));
    let too_fine = ModelConfig {
        grid_side: 40,
        ..ModelConfig::desk()
    };
    assert!(matches!(Model::build(&too_fine), Err(Error::Config(_))));
}

#[test]
fn wrong_input_side_is_a_dimension_error() {
    let model = Model::build(&tiny()).unwrap();
    assert!(matches!(model.predict(&image(7, 32)), Err(Error::Dimension(_))));
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.hdmc");
    let mut model = Model::build(&tiny()).unwrap();
    model.set_template(Tensor::from_fn(&[5, 5, 3], |i| (i as f64).sin())).unwrap();
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, model);
    let x = image(8, 16);
    let (a, b) = (model.predict(&x).unwrap(), loaded.predict(&x).unwrap());
    assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn checkpoint_keeps_optimizer_state() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.hdmc");
    let model = Model::build(&tiny()).unwrap();
    let ck = Checkpoint {
        model,
        step: 42,
        optimizer: Some("adam".into()),
        optimizer_state: vec![("adam.m.head.bias".into(), Tensor::full(&[3], 0.25))],
    };
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);
}

#[test]
fn truncated_checkpoint_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.hdmc");
    save_checkpoint(&Model::build(&tiny()).unwrap(), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    let mut flipped = bytes.clone();
    flipped[200] ^= 1;
    std::fs::write(&path, &flipped).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
}

#[test]
fn checkpoint_for_other_grid_is_a_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.hdmc");
    save_checkpoint(&Model::build(&tiny()).unwrap(), &path).unwrap();
    let other = ModelConfig { grid_side: 7, ..tiny() };
    assert!(matches!(Checkpoint::load_expecting(&path, &other), Err(Error::ConfigMismatch(_))));
    assert!(Checkpoint::load_expecting(&path, &tiny()).is_ok());
}
