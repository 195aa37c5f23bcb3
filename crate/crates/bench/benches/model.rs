use criterion::{criterion_group, criterion_main, Criterion};
use hdm_bench::{desk_model, small_desk_dataset};
use hdm_core::losses::{total_loss, LossConfig};
use hdm_core::Graph;
use std::hint::black_box;

fn inference(c: &mut Criterion) {
    let ds = small_desk_dataset();
    let model = desk_model(&ds.scene);
    let one = ds.image_tensor(&[0]).unwrap();
    c.bench_function("model/predict_batch1", |b| b.iter(|| black_box(model.predict(&one).unwrap())));
}

fn train_step(c: &mut Criterion) {
    let ds = small_desk_dataset();
    let model = desk_model(&ds.scene);
    let batch: Vec<usize> = (0..16).collect();
    let images = ds.image_tensor(&batch).unwrap();
    let gt = ds.surface_tensor(&batch).unwrap();
    let cfg = LossConfig::for_image_side(ds.scene.image_side);
    let cam = ds.scene.camera();
    let mut group = c.benchmark_group("model");
    group.sample_size(10);
    group.bench_function("forward_backward_batch16", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let x = g.constant(images.clone());
            let (pred, params) = model.forward(&mut g, x).unwrap();
            let t = g.constant(gt.clone());
            let (loss, _) = total_loss(&mut g, pred, t, &cam, &cfg).unwrap();
            g.backward(loss).unwrap();
            black_box(g.grad(params[0]));
        })
    });
    group.finish();
}

criterion_group!(model, inference, train_step);
criterion_main!(model);
