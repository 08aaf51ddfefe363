use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use prolif::eval::{
    compare_dirs, evaluate, render_trajectory, render_view, PathKind, PathSpec, RenderOptions, DEFAULT_CHUNK,
    DEFAULT_MEMORY_BUDGET,
};
use prolif::lfnet::{checkpoint_precision, load_checkpoint, Checkpoint};
use prolif::scene::{
    import_llff_to_manifest, write_image, write_synthetic, LoadedScene, Split, SyntheticSpec, MANIFEST_FILE, POSES_FILE,
};
use prolif::train::{run, RunOptions, StepMetrics, TrainConfig};
use prolif::{Precision, Real};

#[derive(Parser)]
#[command(name = "prolif", version, about = "Progressive point-based neural light fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic plane scene with exact ground-truth images.
    Synth(SynthArgs),
    /// Train a network on a scene.
    Train(TrainArgs),
    /// Render views or a camera path from a checkpoint.
    Render(RenderArgs),
    /// Score renders against ground truth.
    Eval(EvalArgs),
    /// Print a checkpoint's stage and shape.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output scene directory.
    #[arg(long)]
    out: PathBuf,
    /// Synthetic scene spec (JSON); defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_resolution)]
    resolution: Option<(usize, usize)>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Flat JSON training config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Resume from this checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    precision: Option<PrecisionArg>,
    /// Single-threaded, bitwise-reproducible training.
    #[arg(long)]
    deterministic: bool,
    /// LLFF downsample factor (reads images_<factor>).
    #[arg(long)]
    factor: Option<u32>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_resolution)]
    resolution: Option<(usize, usize)>,
    #[arg(long, default_value_t = DEFAULT_CHUNK)]
    chunk: usize,
    /// Per-chunk memory budget in MiB.
    #[arg(long, default_value_t = DEFAULT_MEMORY_BUDGET >> 20)]
    budget_mib: usize,
    #[arg(long)]
    precision: Option<PrecisionArg>,
    #[arg(long)]
    deterministic: bool,
    /// Render only this view (name or index); all test views otherwise.
    #[arg(long, conflicts_with = "path")]
    view: Option<String>,
    /// Render a camera path instead of manifest views.
    #[arg(long)]
    path: Option<PathArg>,
    #[arg(long, default_value_t = 0)]
    from: usize,
    #[arg(long, default_value_t = 1)]
    to: usize,
    #[arg(long, default_value_t = 30)]
    frames: usize,
    #[arg(long, default_value_t = 0.05)]
    radius: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to render the test views with.
    #[arg(long, required_unless_present = "renders")]
    checkpoint: Option<PathBuf>,
    #[arg(long, required_unless_present = "renders")]
    scene: Option<PathBuf>,
    /// Directory of rendered images to compare instead of rendering.
    #[arg(long, requires = "truth")]
    renders: Option<PathBuf>,
    /// Ground-truth images matched to `--renders` by file name.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Directory for report.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CHUNK)]
    chunk: usize,
    #[arg(long)]
    precision: Option<PrecisionArg>,
    #[arg(long)]
    deterministic: bool,
    /// Evaluate the training views instead of the held-out ones.
    #[arg(long)]
    train_split: bool,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PathArg {
    Spiral,
    Linear,
}

fn parse_resolution(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    let w: usize = w.parse().map_err(|_| format!("bad width in {s}"))?;
    let h: usize = h.parse().map_err(|_| format!("bad height in {s}"))?;
    if w == 0 || h == 0 {
        return Err("resolution must be positive".into());
    }
    Ok((w, h))
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("PROLIF_THREADS") {
        let n: usize = v.parse().with_context(|| format!("PROLIF_THREADS={v} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

/// Loads a scene directory, importing an LLFF layout on first use.
fn load_scene(dir: &Path, factor: Option<u32>) -> Result<LoadedScene> {
    if !dir.join(MANIFEST_FILE).exists() && dir.join(POSES_FILE).exists() {
        import_llff_to_manifest(dir, factor).with_context(|| format!("importing LLFF scene {}", dir.display()))?;
    }
    LoadedScene::load(dir).with_context(|| format!("loading scene {}", dir.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => SyntheticSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some((w, h)) = a.resolution {
        spec.focal *= w as f64 / spec.width as f64;
        spec.width = w;
        spec.height = h;
    }
    let m = write_synthetic(&spec, &a.out)?;
    let test = m.views_in(Split::Test).count();
    println!(
        "wrote {} views ({} train, {test} test) to {}",
        m.views.len(),
        m.views.len() - test,
        a.out.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            TrainConfig::from_json_str(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(p) = a.precision {
        cfg.precision = p.into();
    }
    cfg.deterministic |= a.deterministic;
    cfg.validate()?;
    let scene = load_scene(&a.scene, a.factor)?;
    let data = scene.training_set(cfg.bounds_expand)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("config.json"), cfg.to_json_string())?;
    let mut report = |m: &StepMetrics| {
        if cfg.log_every > 0 && m.step % cfg.log_every == 0 {
            eprintln!(
                "step {:>8} stage {} lr {:.3e} loss {:.6e} ({:.0} rays/s)",
                m.step, m.stage, m.lr, m.loss.total, m.rays_per_sec
            );
        }
    };
    let opts = RunOptions {
        out_dir: Some(a.out.clone()),
        resume: a.checkpoint.clone(),
        stop_at: None,
        on_metrics: Some(&mut report),
    };
    match cfg.precision {
        Precision::F32 => drop(run::<f32>(&data, &cfg, opts)?),
        Precision::F64 => drop(run::<f64>(&data, &cfg, opts)?),
    }
    println!("final checkpoint: {}", a.out.join("final.plif").display());
    Ok(())
}

fn checkpoint_kind(path: &Path, requested: Option<PrecisionArg>) -> Result<Precision> {
    let bytes = fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let found = checkpoint_precision(&bytes, path)?;
    if let Some(r) = requested.map(Precision::from) {
        if r != found {
            bail!(prolif::Error::PrecisionMismatch {
                found: found.to_string(),
                requested: r.to_string(),
            });
        }
    }
    Ok(found)
}

fn render_with<T: Real>(ck: Checkpoint<T>, a: &RenderArgs, scene: &LoadedScene) -> Result<()> {
    let opts = RenderOptions {
        chunk: a.chunk,
        memory_budget: a.budget_mib << 20,
        parallel: !a.deterministic,
    };
    fs::create_dir_all(&a.out)?;
    if let Some(kind) = a.path {
        let spec = PathSpec {
            kind: match kind {
                PathArg::Spiral => PathKind::Spiral,
                PathArg::Linear => PathKind::Linear,
            },
            from: a.from,
            to: a.to,
            frames: a.frames,
            radius: a.radius,
            turns: 1.0,
        };
        let frames = render_trajectory(&ck.net, &scene.manifest, &spec, a.resolution, &a.out, &opts)?;
        let total: f64 = frames.iter().map(|f| f.ms).sum();
        println!("{} frames, {:.1} ms/frame", frames.len(), total / frames.len() as f64);
        return Ok(());
    }
    let views: Vec<usize> = match &a.view {
        Some(v) => {
            let idx = v
                .parse::<usize>()
                .ok()
                .or_else(|| scene.manifest.views.iter().position(|e| &e.name == v))
                .with_context(|| format!("no view {v}"))?;
            if idx >= scene.manifest.views.len() {
                bail!("view index {idx} out of range");
            }
            vec![idx]
        }
        None => scene.indices(Split::Test),
    };
    for i in views {
        let v = &scene.manifest.views[i];
        let (img, stats) = render_view(&ck.net, &v.camera, &scene.manifest.ndc, a.resolution, &opts)?;
        write_image(&img, &a.out.join(format!("{}.ppm", v.name)))?;
        println!(
            "{}: {}x{} in {:.1} ms, {} chunk(s), peak {:.1} MiB per chunk",
            v.name,
            img.width,
            img.height,
            stats.ms,
            stats.chunks,
            stats.peak_chunk_bytes as f64 / (1 << 20) as f64
        );
    }
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let scene = load_scene(&a.scene, None)?;
    match checkpoint_kind(&a.checkpoint, a.precision)? {
        Precision::F32 => render_with(load_checkpoint::<f32>(&a.checkpoint)?, &a, &scene),
        Precision::F64 => render_with(load_checkpoint::<f64>(&a.checkpoint)?, &a, &scene),
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let report = if let Some(renders) = &a.renders {
        compare_dirs(renders, a.truth.as_deref().context("--renders needs --truth")?)?
    } else {
        let (ckp, dir) = (a.checkpoint.as_ref().unwrap(), a.scene.as_ref().unwrap());
        let scene = load_scene(dir, None)?;
        let opts = RenderOptions {
            chunk: a.chunk,
            parallel: !a.deterministic,
            ..Default::default()
        };
        let split = if a.train_split { Split::Train } else { Split::Test };
        match checkpoint_kind(ckp, a.precision)? {
            Precision::F32 => evaluate(&load_checkpoint::<f32>(ckp)?.net, &scene, split, &opts)?,
            Precision::F64 => evaluate(&load_checkpoint::<f64>(ckp)?.net, &scene, split, &opts)?,
        }
    };
    print!("{}", report.table());
    let json = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            report.save(&dir.join("report.json"))?;
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn describe<T: Real>(ck: Checkpoint<T>, precision: Precision) {
    let net = &ck.net;
    println!("precision: {precision}");
    println!("stage: {} of {}", net.stage, net.config.num_stages);
    println!("subnets: {}", net.num_subnets());
    println!("hidden width: {}", net.hidden_width());
    println!("hidden depth: {}", net.config.hidden_depth);
    println!("depth samples: {}", net.depth_samples());
    println!("samples per subnet: {}", net.samples_per_subnet());
    println!("parameters: {}", net.num_params());
    match &ck.state {
        Some(s) => println!("training step: {}", s.step),
        None => println!("training step: none"),
    }
}

fn inspect(a: InspectArgs) -> Result<()> {
    match checkpoint_kind(&a.checkpoint, None)? {
        Precision::F32 => describe(load_checkpoint::<f32>(&a.checkpoint)?, Precision::F32),
        Precision::F64 => describe(load_checkpoint::<f64>(&a.checkpoint)?, Precision::F64),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Render(a) => render(a),
        Command::Eval(a) => eval(a),
        Command::Inspect(a) => inspect(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
