use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::lfnet::{load_checkpoint, save_checkpoint};
use crate::real::Real;
use crate::train::config::TrainConfig;
use crate::train::step::{train_step, StepMetrics, Trainer, TrainingSet};

pub const METRICS_HEADER: &str = "step\tstage\tlr\trender\tdensity\tcolor\ttotal\trays_per_sec";

pub fn metrics_line(m: &StepMetrics) -> String {
    format!(
        "{}\t{}\t{:.6e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.1}",
        m.step, m.stage, m.lr, m.loss.render, m.loss.density, m.loss.color, m.loss.total, m.rays_per_sec
    )
}

#[derive(Default)]
pub struct RunOptions<'a> {
    /// Directory for checkpoints and the metrics log.
    pub out_dir: Option<PathBuf>,
    /// Checkpoint to resume from.
    pub resume: Option<PathBuf>,
    /// Stop after this many total steps (for interrupted runs).
    pub stop_at: Option<u64>,
    pub on_metrics: Option<&'a mut dyn FnMut(&StepMetrics)>,
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn checkpoint<T: Real>(&self, trainer: &Trainer<T>, name: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        save_checkpoint(&trainer.net, Some(&trainer.state()), &path)?;
        Ok(path)
    }

    fn log(&self, line: &str) -> Result<()> {
        let path = self.dir.join("metrics.tsv");
        let fresh = !path.exists();
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(f, "{METRICS_HEADER}")?;
        }
        writeln!(f, "{line}")?;
        Ok(())
    }
}

/// Runs the staged schedule, transitioning between stages and writing
/// checkpoints before and after every transition.
pub fn run<T: Real>(data: &TrainingSet, cfg: &TrainConfig, mut opts: RunOptions<'_>) -> Result<Trainer<T>> {
    cfg.validate()?;
    let mut trainer = match &opts.resume {
        Some(path) => Trainer::from_checkpoint(cfg.clone(), load_checkpoint::<T>(path)?)?,
        None => Trainer::new(cfg.clone())?,
    };
    let out = opts.out_dir.as_deref().map(Output::new).transpose()?;
    let end = opts.stop_at.unwrap_or(cfg.total_steps).min(cfg.total_steps);
    loop {
        let want = cfg.stage_for_step(trainer.step)?;
        while trainer.net.stage < want {
            let k = trainer.net.stage;
            if let Some(o) = &out {
                o.checkpoint(&trainer, &format!("stage{k}_pre.plif"))?;
            }
            trainer.advance_stage()?;
            if let Some(o) = &out {
                o.checkpoint(&trainer, &format!("stage{}_post.plif", k + 1))?;
            }
        }
        if trainer.step >= end {
            break;
        }
        let metrics = match train_step(&mut trainer, data) {
            Ok(m) => m,
            Err(Error::NonFinite(what)) => {
                let dump = match &out {
                    Some(o) => format!("; state dumped to {}", o.checkpoint(&trainer, &format!("abort_step{}.plif", trainer.step))?.display()),
                    None => String::new(),
                };
                return Err(Error::NonFinite(format!(
                    "{what} at step {} (stage {}){dump}",
                    trainer.step, trainer.net.stage
                )));
            }
            Err(e) => return Err(e),
        };
        if let Some(cb) = opts.on_metrics.as_mut() {
            cb(&metrics);
        }
        if let Some(o) = &out {
            if cfg.log_every > 0 && (metrics.step % cfg.log_every == 0 || metrics.step == end) {
                o.log(&metrics_line(&metrics))?;
            }
            if cfg.checkpoint_every > 0 && metrics.step % cfg.checkpoint_every == 0 {
                o.checkpoint(&trainer, &format!("step{:08}.plif", metrics.step))?;
            }
        }
    }
    if let Some(o) = &out {
        o.checkpoint(&trainer, "final.plif")?;
    }
    Ok(trainer)
}
