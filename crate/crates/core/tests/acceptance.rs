//! End-to-end acceptance checks. Each test prints one PASS/FAIL line with the
//! measured values, then asserts. Tests hold a global lock so the timed ones
//! do not compete for cores.

use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use prolif::diffcore::{DenseMatrix, DualBatch, Tape};
use prolif::eval::{evaluate, psnr, render_rays, render_view, RenderOptions};
use prolif::lfnet::{forward, init_siren, merge_stage, subdivide_depth, transition, DepthGrid, ProLiFNetwork, StageConfig};
use prolif::losses::{density_consistency, jacobian_bundle, JacobianBundle, LossWeights};
use prolif::rays::{camera_rays, point_batch, sample_regularization_rays, tangent_basis, RayBatch, RayBounds, RayDirections, RayTwoPlane};
use prolif::render::{composite, composite_subdivision_gap, composite_values};
use prolif::scene::{generate_synthetic, LoadedScene, SceneManifest, Split, SyntheticSpec};
use prolif::train::{loss_and_grad, loss_value, regularization_depths, run, RunOptions, TrainConfig, TrainingSet};
use prolif::{Precision, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: usize, name: &str, ok: bool, detail: String) {
    println!("criterion {n:>2} {} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn tiny16() -> StageConfig {
    StageConfig::tiny(4, 16, 8, 3)
}

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn jitter(net: &mut ProLiFNetwork<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    for l in net.layers_mut() {
        for x in l.v.data_mut().iter_mut().chain(l.b.iter_mut()) {
            *x += scale * rng.random_range(-1.0..1.0);
        }
    }
}

fn reg_rays(rng: &mut ChaCha8Rng, n: usize) -> RayBatch {
    let b = RayBounds {
        lo: [-0.5, -0.5, -0.6, -0.6],
        hi: [0.5, 0.5, 0.6, 0.6],
    };
    sample_regularization_rays(&b, n, rng)
}

/// Random network at `stage`, each stage reached by transition and perturbed.
fn random_state(cfg: &StageConfig, stage: usize, seed: u64) -> ProLiFNetwork<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = init_siren::<f64>(cfg, seed).unwrap();
    jitter(&mut net, &mut rng, 0.05);
    for _ in 0..stage {
        net = transition(&net).unwrap();
        jitter(&mut net, &mut rng, 0.05);
    }
    net
}

fn colors<T: Real>(net: &ProLiFNetwork<T>, rays: &[RayTwoPlane]) -> Vec<[f64; 3]> {
    let opts = RenderOptions {
        parallel: false,
        ..Default::default()
    };
    render_rays(net, rays, &opts).unwrap().0
}

fn max_gap(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn c01_transition_invariance() {
    let _g = serial();
    let start = Instant::now();
    let cfg = tiny16();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let rays = reg_rays(&mut rng, 10_000).rays;
    let (mut w64, mut w32) = (0.0f64, 0.0f64);
    for stage in 0..cfg.num_stages - 1 {
        for k in 0..5 {
            let net = random_state(&cfg, stage, 1000 + 10 * stage as u64 + k);
            let base = colors(&net, &rays);
            for op in [merge_stage::<f64>, subdivide_depth::<f64>, transition::<f64>] {
                w64 = w64.max(max_gap(&base, &colors(&op(&net).unwrap(), &rays)));
            }
            let net32 = net.cast::<f32>();
            let base = colors(&net32, &rays);
            for op in [merge_stage::<f32>, subdivide_depth::<f32>, transition::<f32>] {
                w32 = w32.max(max_gap(&base, &colors(&op(&net32).unwrap(), &rays)));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = w64 <= 1e-10 && w32 <= 1e-5 && secs < 60.0;
    report(1, "transition invariance", ok, format!("max |dC| f64 {w64:.3e}, f32 {w32:.3e}, {secs:.1}s"));
    assert!(ok);
}

#[test]
fn c02_stage0_nullity() {
    let _g = serial();
    let cfg = tiny16();
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let net = init_siren::<f64>(&cfg, seed).unwrap();
        let rays = reg_rays(&mut rng, 1000);
        worst = worst.max(density(&net, &rays));
    }
    // preservation across transition on a fixed batch
    let net = init_siren::<f64>(&cfg, 7).unwrap();
    let batch = reg_rays(&mut rng, 1000);
    let before = density(&net, &batch);
    let after = density(&transition(&net).unwrap(), &batch);
    let drift = (after - before).abs();
    let ok = worst <= 1e-10 && drift <= 1e-8;
    report(
        2,
        "stage-0 nullity",
        ok,
        format!("max stage-0 value {worst:.3e}; before/after transition {before:.3e} / {after:.3e} (drift {drift:.3e})"),
    );
    assert!(ok);
}

fn density(net: &ProLiFNetwork<f64>, rays: &RayBatch) -> f64 {
    let mut tape = Tape::new();
    let pass = jacobian_bundle(net, rays, &mut tape).unwrap();
    let b = JacobianBundle::from_tape(&tape, &pass).unwrap();
    density_consistency(&b, &net.grid).unwrap()
}

#[test]
fn c03_gradient_oracle() {
    let _g = serial();
    let start = Instant::now();
    let cfg = StageConfig::tiny(4, 8, 4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for stage in 0..cfg.num_stages {
        let net = random_state(&cfg, stage, 300 + stage as u64);
        let fit_rays = reg_rays(&mut rng, 6).rays;
        let targets = (0..6).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let fit = RayBatch::fit(fit_rays, targets).unwrap();
        let reg = reg_rays(&mut rng, 6);
        let w = LossWeights {
            lambda_density: 0.5,
            lambda_color: 0.5,
            acc_threshold: 0.0,
            ..LossWeights::default()
        };
        let (_, grads) = loss_and_grad(&net, &fit, &reg, &w, 4, false).unwrap();
        let depths = regularization_depths(&net, &reg).unwrap();
        let flat = net.flat_params();
        let g: Vec<f64> = grads.iter().collect();
        let eps = 1e-5;
        for _ in 0..120 {
            let i = rng.random_range(0..flat.len());
            let mut probe = net.clone();
            let mut p = flat.clone();
            p[i] = flat[i] + eps;
            probe.set_flat_params(&p).unwrap();
            let fp = loss_value(&probe, &fit, &reg, &w, Some(&depths)).unwrap().total;
            p[i] = flat[i] - eps;
            probe.set_flat_params(&p).unwrap();
            let fm = loss_value(&probe, &fit, &reg, &w, Some(&depths)).unwrap().total;
            worst = worst.max(rel(g[i], (fp - fm) / (2.0 * eps), 1e-8));
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst <= 1e-4 && secs < 300.0;
    report(3, "gradient oracle", ok, format!("{checked} params, worst rel {worst:.3e}, {secs:.1}s"));
    assert!(ok);
}

fn eval_single(net: &ProLiFNetwork<f64>, ray: RayTwoPlane) -> (Vec<f64>, Vec<f64>) {
    let mut tape = Tape::inference();
    let x = tape.input(point_batch(&[ray], &net.grid, &[]).unwrap()).unwrap();
    let s = forward(net, x, &mut tape).unwrap();
    let out = composite(&s, &net.grid, &mut tape).unwrap();
    (tape.value(s.sigma).unwrap().primal().to_vec(), tape.value(out.color).unwrap().primal().to_vec())
}

#[test]
fn c04_jacobian_oracle() {
    let _g = serial();
    let cfg = tiny16();
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let mut worst = 0.0f64;
    for stage in 0..cfg.num_stages {
        let net = random_state(&cfg, stage, 400 + stage as u64);
        let rays = reg_rays(&mut rng, 8);
        let mut tape = Tape::new();
        let pass = jacobian_bundle(&net, &rays, &mut tape).unwrap();
        let b = JacobianBundle::from_tape(&tape, &pass).unwrap();
        let eps = 1e-6;
        for (r, ray) in rays.rays.iter().enumerate() {
            for dir in 0..4 {
                let mut e = [0.0; 4];
                e[dir] = 1.0;
                let (sp, cp) = eval_single(&net, ray.offset(e, eps));
                let (sm, cm) = eval_single(&net, ray.offset(e, -eps));
                for i in 0..net.depth_samples() {
                    worst = worst.max(rel(b.j_sigma(r, i, dir), (sp[i] - sm[i]) / (2.0 * eps), 1e-6));
                }
                for ch in 0..3 {
                    worst = worst.max(rel(b.j_color(r, ch, dir), (cp[ch] - cm[ch]) / (2.0 * eps), 1e-6));
                }
            }
        }
    }
    // the point at depth d_j does not move along the direction tied to d_j
    let mut moved = 0usize;
    for d in [4, 8, 16, 32] {
        let grid = DepthGrid::new(d);
        let rays = reg_rays(&mut rng, 200).rays;
        for (j, &dj) in grid.values().iter().enumerate() {
            let dirs = [RayDirections::Shared(tangent_basis(dj).p), RayDirections::Shared(tangent_basis(dj).q)];
            let batch: DualBatch<f64> = point_batch(&rays, &grid, &dirs).unwrap();
            for k in 0..2 {
                let t = batch.tangent(k);
                for row in t.chunks_exact(2 * d) {
                    moved += (row[2 * j] != 0.0) as usize + (row[2 * j + 1] != 0.0) as usize;
                }
            }
        }
    }
    let ok = worst <= 1e-5 && moved == 0;
    report(4, "Jacobian oracle", ok, format!("worst rel {worst:.3e}, nonzero stationary tangents {moved}"));
    assert!(ok);
}

/// Transmittance recomputed from scratch for every sample.
fn naive(sigma: &[f64], color: &[f64], grid: &DepthGrid) -> ([f64; 3], f64) {
    let delta = 1.0 / grid.len() as f64;
    let mut c = [0.0; 3];
    let mut acc = 0.0;
    for i in 0..grid.len() {
        let mut t = 1.0;
        for &s in &sigma[..i] {
            t *= 1.0 - (1.0 - (-delta * s).exp());
        }
        let w = t * (1.0 - (-delta * sigma[i]).exp());
        for ch in 0..3 {
            c[ch] += w * color[3 * i + ch];
        }
        acc += w;
    }
    (c, acc)
}

#[test]
fn c05_compositor() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut mismatches = 0;
    for trial in 0..10_000 {
        let d = [1, 2, 4, 8, 16, 32][trial % 6];
        let grid = DepthGrid::new(d);
        let sigma: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..40.0)).collect();
        let color: Vec<f64> = (0..3 * d).map(|_| rng.random()).collect();
        let s = DualBatch::constant(DenseMatrix::from_vec(1, d, sigma.clone()).unwrap());
        let c = DualBatch::constant(DenseMatrix::from_vec(1, 3 * d, color.clone()).unwrap());
        let (oc, og) = composite_values(&s, &c, &grid).unwrap();
        let got = ([oc.primal()[0], oc.primal()[1], oc.primal()[2]], og.primal()[0]);
        mismatches += (got != naive(&sigma, &color, &grid)) as usize;
    }
    let mut gap = 0.0f64;
    for d in [2, 4, 8, 16] {
        let grid = DepthGrid::new(d);
        let sigma = DenseMatrix::from_fn(1000, d, |_, _| rng.random_range(0.0..30.0));
        let color = DenseMatrix::from_fn(1000, 3 * d, |_, _| rng.random());
        gap = gap.max(composite_subdivision_gap(&sigma, &color, &grid).unwrap());
    }
    let ok = mismatches == 0 && gap <= 1e-12;
    report(5, "compositor", ok, format!("{mismatches} of 10000 sets differ from the loop; subdivision gap {gap:.3e}"));
    assert!(ok);
}

fn default_scene(spec: &SyntheticSpec) -> LoadedScene {
    let (_, manifest, images) = generate_synthetic(spec).unwrap();
    LoadedScene {
        dir: ".".into(),
        manifest,
        images,
    }
}

/// Desk-scale schedule: the tiny network with smaller batches than the
/// full-size defaults so 30k steps fit the time budget on one core.
fn desk_config(steps: u64) -> TrainConfig {
    TrainConfig {
        stage: tiny16(),
        total_steps: steps,
        fit_batch: 1024,
        reg_batch: 256,
        shard_size: 1024,
        precision: Precision::F32,
        deterministic: true,
        log_every: 0,
        ..Default::default()
    }
}

fn train_and_score(scene: &LoadedScene, cfg: &TrainConfig) -> (f64, f64, f64) {
    let start = Instant::now();
    let data = scene.training_set(cfg.bounds_expand).unwrap();
    let trainer = run::<f32>(&data, cfg, RunOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let opts = RenderOptions::default();
    let test = evaluate(&trainer.net, scene, Split::Test, &opts).unwrap().mean_psnr;
    let train = evaluate(&trainer.net, scene, Split::Train, &opts).unwrap().mean_psnr;
    (test, train, secs)
}

#[test]
fn c06_end_to_end() {
    let _g = serial();
    let scene = default_scene(&SyntheticSpec::default());
    assert_eq!(scene.indices(Split::Train).len(), 21);
    assert_eq!(scene.indices(Split::Test).len(), 4);
    let (test, train, secs) = train_and_score(&scene, &desk_config(30_000));
    let ok = test >= 28.0 && secs < 1800.0;
    report(6, "end-to-end", ok, format!("held-out PSNR {test:.2} dB (train {train:.2}), {secs:.0}s"));
    assert!(ok);
}

struct OverfitRun {
    psnr: f64,
    secs: f64,
    checkpoint: Vec<u8>,
}

fn overfit_run() -> OverfitRun {
    let scene = default_scene(&SyntheticSpec::default());
    let view = 12;
    let cam = &scene.manifest.views[view].camera;
    // a 5000-step schedule needs a faster start than the long-run default
    let cfg = TrainConfig {
        lr_start: 1e-3,
        lr_end: 2.5e-5,
        ..desk_config(5000)
    };
    let rays = camera_rays(cam, &scene.manifest.ndc).unwrap();
    let data = TrainingSet::new(rays, scene.images[view].pixels().collect(), cfg.bounds_expand).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let trainer = run::<f32>(
        &data,
        &cfg,
        RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        },
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (img, _) = render_view(&trainer.net, cam, &scene.manifest.ndc, None, &RenderOptions::default()).unwrap();
    OverfitRun {
        psnr: psnr(&img, &scene.images[view]).unwrap(),
        secs,
        checkpoint: std::fs::read(dir.path().join("final.plif")).unwrap(),
    }
}

fn first_overfit() -> &'static OverfitRun {
    static RUN: OnceLock<OverfitRun> = OnceLock::new();
    RUN.get_or_init(overfit_run)
}

#[test]
fn c07_overfit() {
    let _g = serial();
    let r = first_overfit();
    let ok = r.psnr >= 35.0 && r.secs < 300.0;
    report(7, "single-image overfit", ok, format!("train PSNR {:.2} dB, {:.0}s", r.psnr, r.secs));
    assert!(ok);
}

/// The default scene keeping only the even-indexed training views.
fn nine_view_scene() -> LoadedScene {
    let full = default_scene(&SyntheticSpec::default());
    let keep: Vec<usize> = (0..full.images.len())
        .filter(|&i| full.manifest.views[i].split == Split::Test || i % 2 == 0)
        .collect();
    let manifest = SceneManifest {
        views: keep.iter().map(|&i| full.manifest.views[i].clone()).collect(),
        ..full.manifest.clone()
    };
    let images = keep.iter().map(|&i| full.images[i].clone()).collect();
    LoadedScene {
        dir: ".".into(),
        manifest,
        images,
    }
}

#[test]
fn c08_regularizer_ablation() {
    let _g = serial();
    let scene = nine_view_scene();
    assert_eq!(scene.indices(Split::Train).len(), 9);
    assert_eq!(scene.indices(Split::Test).len(), 4);
    let full = desk_config(30_000);
    let ablated = TrainConfig {
        init_stage: full.stage.num_stages - 1,
        loss: LossWeights {
            lambda_density: 0.0,
            lambda_color: 0.0,
            ..full.loss.clone()
        },
        ..full.clone()
    };
    let (p_full, _, s_full) = train_and_score(&scene, &full);
    let (p_abl, _, s_abl) = train_and_score(&scene, &ablated);
    let margin = p_full - p_abl;
    let ok = margin >= 1.0;
    report(
        8,
        "regularizer ablation",
        ok,
        format!("full {p_full:.2} dB ({s_full:.0}s) vs single-stage no-reg {p_abl:.2} dB ({s_abl:.0}s), margin {margin:.2} dB"),
    );
    assert!(ok);
}

#[test]
fn c09_large_patch() {
    let _g = serial();
    let scene = default_scene(&SyntheticSpec::default());
    let cam = &scene.manifest.views[12].camera;
    let budget = 256 << 20;
    let opts = RenderOptions {
        chunk: 300 * 300,
        memory_budget: budget,
        parallel: false,
    };
    let mut net = init_siren::<f32>(&tiny16(), 9).unwrap();
    let mut lines = Vec::new();
    let mut ok = true;
    loop {
        let (img, stats) = render_view(&net, cam, &scene.manifest.ndc, Some((300, 300)), &opts).unwrap();
        let fine = (img.width, img.height) == (300, 300)
            && stats.chunks == 1
            && stats.peak_chunk_bytes <= budget
            && img.data.iter().all(|x| x.is_finite());
        ok &= fine;
        lines.push(format!(
            "stage {} peak {:.1} MiB (estimate {:.1})",
            net.stage,
            stats.peak_chunk_bytes as f64 / (1 << 20) as f64,
            stats.estimated_chunk_bytes as f64 / (1 << 20) as f64
        ));
        if net.is_final_stage() {
            break;
        }
        net = transition(&net).unwrap();
    }
    report(9, "300x300 single chunk", ok, format!("budget 256 MiB; {}", lines.join(", ")));
    assert!(ok);
}

#[test]
fn c10_determinism() {
    let _g = serial();
    let a = &first_overfit().checkpoint;
    let b = overfit_run().checkpoint;
    let ok = *a == b;
    report(10, "determinism", ok, format!("final checkpoints {} bytes, identical: {ok}", b.len()));
    assert!(ok);
}
