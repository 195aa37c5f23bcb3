use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::Utc;
use hdm_core::datagen::{generate_dataset, images_to_tensor, read_dataset, write_dataset, DatasetReader};
use hdm_core::geometry::frame_error;
use hdm_core::gradcheck::{run_suite, OPS, TOLERANCE};
use hdm_core::losses::{soft_rasterize_values, LossConfig, LossTerms};
use hdm_core::trainer::{self, evaluate_with, model_for_scene, noise_sweep, EpochStats, NoisePoint, OptimizerKind};
use hdm_core::{Alignment, CameraIntrinsics, Checkpoint, DeformationDataset, Precision, Split};
use serde_json::json;

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::surface_io::{encode_surface, raster_pgm, read_image, surface_obj};
use crate::{
    AlignmentArg, CliError, EvalArgs, GenerateArgs, GradcheckArgs, InferArgs, OptimizerArg, PrecisionArg, SplitArg,
    TrainArgs,
};

/// `dir/name.ext` becomes `dir/name.ext<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn to_json<T: serde::Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("configs serialize to JSON")
}

fn load_dataset(path: &Path) -> Result<DeformationDataset, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("dataset {} does not exist", path.display())));
    }
    Ok(read_dataset(path)?)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

impl From<AlignmentArg> for Alignment {
    fn from(a: AlignmentArg) -> Self {
        match a {
            AlignmentArg::None => Alignment::None,
            AlignmentArg::Rigid => Alignment::Rigid,
            AlignmentArg::Similarity => Alignment::Similarity,
        }
    }
}

pub fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let started = Utc::now();
    let mut scene = RunConfig::load(args.config.as_deref())?.scene;
    if let Some(seed) = args.seed {
        scene.seed = seed;
    }
    if let Some(states) = args.states {
        scene.num_states = states;
    }
    scene.validate()?;
    let clock = Instant::now();
    let ds = generate_dataset(&scene)?;
    write_dataset(&ds, &args.out)?;
    let (train, test) = (ds.indices(Split::Train).len(), ds.indices(Split::Test).len());
    println!(
        "{} samples: {} states x {} textures x {} lights x {} cameras",
        ds.len(),
        scene.num_states,
        scene.textures.len(),
        scene.lights.len(),
        scene.poses.len()
    );
    println!("split: {train} train, {test} test");
    println!("textures: {}", scene.texture_names().join(", "));
    println!("wrote {} in {:.1}s", args.out.display(), clock.elapsed().as_secs_f64());
    let config = json!({ "scene": to_json(&scene), "content_hash": ds.content_hash() });
    RunManifest::new("generate", scene.seed, config, started)
        .output(&args.out)?
        .write_beside(&args.out)?;
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let started = Utc::now();
    let ds = load_dataset(&args.data)?;
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    cfg.adapt_to(&ds.scene);
    let t = &mut cfg.train;
    if let Some(list) = &args.losses {
        t.loss.terms = LossTerms::parse(list)?;
    }
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.lr {
        t.learning_rate = v;
    }
    if let Some(v) = args.seed {
        t.seed = v;
    }
    if let Some(v) = args.eval_every {
        t.eval_every = v;
    }
    match args.optimizer {
        Some(OptimizerArg::Adam) if t.optimizer.name() != "adam" => t.optimizer = OptimizerKind::default(),
        Some(OptimizerArg::Sgd) if t.optimizer.name() != "sgd_momentum" => {
            t.optimizer = OptimizerKind::SgdMomentum { momentum: 0.9 }
        }
        _ => {}
    }
    match args.precision {
        Some(PrecisionArg::F64) => t.precision = Precision::F64,
        Some(PrecisionArg::F32) => t.precision = Precision::F32,
        None => {}
    }
    if let Some(v) = args.init_seed {
        cfg.model.seed = v;
    }
    cfg.train.validate()?;
    let model = model_for_scene(&cfg.model, &ds.scene)?;
    log::info!(
        "training {} parameters on {} samples, losses {}, {} epochs",
        model.parameter_count(),
        ds.indices(Split::Train).len(),
        cfg.train.loss.terms.label(),
        cfg.train.epochs
    );
    let clock = Instant::now();
    let outcome = trainer::train(model, &ds, &cfg.train)?;
    let checkpoint = Checkpoint {
        step: outcome.optimizer.steps(),
        optimizer: Some(outcome.optimizer.kind().name().to_string()),
        optimizer_state: outcome.optimizer_state(),
        model: outcome.model,
    };
    checkpoint.save(&args.out)?;
    let history = sibling(&args.out, ".history.csv");
    write_file(&history, EpochStats::csv(&outcome.history))?;
    if let Some(last) = outcome.history.last() {
        println!(
            "epoch {}: loss {:.6} (3d {:.6}, iso {:.6}, contour {:.6})",
            last.epoch, last.loss, last.three_d, last.iso, last.contour
        );
    }
    println!(
        "wrote {} ({} steps) in {:.1}s; parameters {}",
        args.out.display(),
        checkpoint.step,
        clock.elapsed().as_secs_f64(),
        checkpoint.model.parameter_hash()
    );
    let config = json!({ "model": to_json(&cfg.model), "train": to_json(&cfg.train) });
    RunManifest::new("train", cfg.train.seed, config, started)
        .input(&args.data)?
        .output(&args.out)?
        .output(&history)?
        .write_beside(&args.out)?;
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let started = Utc::now();
    let ds = load_dataset(&args.data)?;
    let model = load_checkpoint(&args.checkpoint)?.model;
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    cfg.adapt_to(&ds.scene);
    let e = &mut cfg.eval;
    if let Some(a) = args.alignment {
        e.alignment = a.into();
    }
    if let Some(noise) = args.noise {
        e.noise = noise;
    }
    if let Some(seed) = args.noise_seed {
        e.noise_seed = seed;
    }
    let split = match args.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let report = evaluate_with(&model, &ds, split, cfg.eval.alignment, &cfg.train.loss, None)?;
    print!("{}", report.summary());
    let sweep = if cfg.eval.noise.is_empty() {
        Vec::new()
    } else {
        noise_sweep(&model, &ds, &cfg.eval.noise, cfg.eval.noise_seed, cfg.eval.alignment)?
    };
    for p in &sweep {
        println!("  noise {:<6} e3d {:.5} ± {:.5}", p.fraction, p.e3d, p.sigma);
    }
    if let Some(out) = &args.out {
        write_file(out, report.csv())?;
        let mut manifest = RunManifest::new(
            "eval",
            cfg.eval.noise_seed,
            json!({ "split": split, "eval": to_json(&cfg.eval), "loss": to_json(&cfg.train.loss) }),
            started,
        )
        .input(&args.data)?
        .input(&args.checkpoint)?
        .output(out)?;
        if !sweep.is_empty() {
            let noise = out.with_extension("noise.csv");
            write_file(&noise, NoisePoint::csv(&sweep))?;
            manifest = manifest.output(&noise)?;
        }
        manifest.write_beside(out)?;
    }
    Ok(())
}

pub fn infer(args: InferArgs) -> Result<(), CliError> {
    let started = Utc::now();
    let model = load_checkpoint(&args.checkpoint)?.model;
    let (side, g) = (model.config().input_side, model.config().grid_side);
    let mut camera = CameraIntrinsics::for_image_side(side);
    let mut manifest_inputs = vec![args.checkpoint.clone()];
    let mut gt = None;
    let image = match (&args.image, &args.data) {
        (Some(path), _) => {
            manifest_inputs.push(path.clone());
            read_image(path, side)?
        }
        (None, Some(data)) => {
            let index = args.index.expect("clap requires --index with --data");
            let mut reader = DatasetReader::open(data)?;
            let scene = reader.scene();
            if scene.image_side != side || scene.grid_side != g {
                return Err(CliError::Usage(format!(
                    "dataset has {}px images and G {}, checkpoint expects {side}px and G {g}",
                    scene.image_side, scene.grid_side
                )));
            }
            camera = scene.camera();
            if index >= reader.len() {
                return Err(CliError::Usage(format!("index {index} out of range for {} samples", reader.len())));
            }
            let sample = reader.read_sample(index)?;
            gt = Some(sample.surface.iter().map(|&v| v as f64).collect::<Vec<_>>());
            manifest_inputs.push(data.clone());
            sample.image
        }
        (None, None) => unreachable!("clap requires an image source"),
    };
    let input = images_to_tensor(&[&image], side)?;
    let clock = Instant::now();
    let pred = model.predict(&input)?;
    let ms = clock.elapsed().as_secs_f64() * 1e3;
    let coords = pred.data();
    write_file(&args.out, encode_surface(g, coords))?;
    let mut outputs = vec![args.out.clone()];
    println!("reconstructed {g}x{g} surface in {ms:.2} ms -> {}", args.out.display());
    if let Some(gt) = &gt {
        println!("e3d vs ground truth: {:.6}", frame_error(coords, gt, Alignment::Rigid)?);
    }
    if let Some(obj) = &args.obj {
        write_file(obj, surface_obj(g, coords))?;
        outputs.push(obj.clone());
    }
    if let Some(raster) = &args.raster {
        let mut points = Vec::with_capacity(g * g * 2);
        for (k, p) in coords.chunks_exact(3).enumerate() {
            let uv = camera.project_point([p[0], p[1], p[2]]).map_err(|_| {
                CliError::Failure(format!("predicted point {k} lies behind the camera (z = {})", p[2]))
            })?;
            points.extend(uv);
        }
        let loss = LossConfig::for_image_side(side);
        write_file(raster, raster_pgm(loss.raster_side, &soft_rasterize_values(&points, &loss)))?;
        outputs.push(raster.clone());
    }
    let mut manifest = RunManifest::new(
        "infer",
        model.config().seed,
        json!({ "model": to_json(model.config()), "index": args.index, "milliseconds": ms }),
        started,
    );
    for p in &manifest_inputs {
        manifest = manifest.input(p)?;
    }
    for p in &outputs {
        manifest = manifest.output(p)?;
    }
    manifest.write_beside(&args.out)?;
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let ops: Vec<String> = if args.all {
        OPS.iter().map(|s| s.to_string()).collect()
    } else {
        args.op.clone()
    };
    if let Some(bad) = ops.iter().find(|op| !OPS.contains(&op.as_str())) {
        return Err(CliError::Usage(format!("unknown op '{bad}'; known ops: {}", OPS.join(", "))));
    }
    if args.trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let clock = Instant::now();
    println!("{:<22} {:>6} {:>9} {:>8} {:>12}  result", "op", "trials", "checked", "skipped", "worst_rel");
    let mut failed = Vec::new();
    for op in &ops {
        let r = run_suite(op, args.trials, args.seed)?;
        println!(
            "{:<22} {:>6} {:>9} {:>8} {:>12.3e}  {}",
            r.op,
            r.trials,
            r.checked,
            r.skipped,
            r.worst_rel_err,
            if r.passed { "pass" } else { "FAIL" }
        );
        if !r.passed {
            failed.push(format!("{} (worst relative error {:.3e})", r.op, r.worst_rel_err));
        }
    }
    println!(
        "{} of {} ops pass at tolerance {TOLERANCE:e} in {:.1}s",
        ops.len() - failed.len(),
        ops.len(),
        clock.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(failed.join(", ")))
    }
}
