use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lfnet::StageConfig;
use crate::losses::LossWeights;
use crate::real::Precision;

/// Training configuration, read from a flat JSON object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub stage: StageConfig,
    #[serde(flatten)]
    pub loss: LossWeights,
    pub total_steps: u64,
    /// Explicit per-stage step counts; an even split when absent.
    pub steps_per_stage: Option<Vec<u64>>,
    /// First trained stage; later values skip the progressive schedule.
    pub init_stage: usize,
    pub fit_batch: usize,
    pub reg_batch: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub precision: Precision,
    pub deterministic: bool,
    /// Rays per forward/backward shard.
    pub shard_size: usize,
    /// Relative widening of the regularization ray bounds.
    pub bounds_expand: f64,
    /// Step interval for periodic checkpoints; 0 keeps only stage boundaries and the final state.
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: StageConfig::default(),
            loss: LossWeights::default(),
            total_steps: 1_000_000,
            steps_per_stage: None,
            init_stage: 0,
            fit_batch: 16384,
            reg_batch: 4096,
            lr_start: 1e-4,
            lr_end: 2.5e-6,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            precision: Precision::F32,
            deterministic: false,
            shard_size: 1024,
            bounds_expand: 0.02,
            checkpoint_every: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    /// Parses a flat JSON object, rejecting unknown keys.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::InvalidConfig("config must be a JSON object".into()))?;
        let known = serde_json::to_value(TrainConfig::default())?;
        let known = known.as_object().expect("config serializes to an object");
        for key in obj.keys() {
            if !known.contains_key(key) {
                return Err(Error::InvalidConfig(format!("unknown config key {key:?}")));
            }
        }
        let cfg: TrainConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.stage.validate()?;
        self.loss.validate()?;
        if self.init_stage >= self.stage.num_stages {
            return Err(Error::InvalidConfig(format!(
                "init_stage {} must be below num_stages {}",
                self.init_stage, self.stage.num_stages
            )));
        }
        if self.fit_batch == 0 || self.reg_batch == 0 || self.shard_size == 0 {
            return Err(Error::InvalidConfig("batch and shard sizes must be positive".into()));
        }
        if !(self.lr_start >= self.lr_end && self.lr_end >= 0.0) {
            return Err(Error::InvalidConfig("learning rates must satisfy lr_start >= lr_end >= 0".into()));
        }
        let betas_ok = (0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2);
        if !betas_ok || !(self.adam_eps > 0.0) {
            return Err(Error::InvalidConfig("Adam betas must lie in [0, 1) and eps must be > 0".into()));
        }
        self.stage_steps().map(|_| ())
    }

    pub fn trained_stages(&self) -> usize {
        self.stage.num_stages - self.init_stage
    }

    /// Steps spent at each trained stage.
    pub fn stage_steps(&self) -> Result<Vec<u64>> {
        let n = self.trained_stages() as u64;
        match &self.steps_per_stage {
            Some(steps) => {
                if steps.len() as u64 != n || steps.iter().sum::<u64>() != self.total_steps {
                    return Err(Error::InvalidConfig(format!(
                        "steps_per_stage {steps:?} must list {n} entries summing to total_steps {}",
                        self.total_steps
                    )));
                }
                Ok(steps.clone())
            }
            None => {
                let base = self.total_steps / n;
                let mut out = vec![base; n as usize];
                *out.last_mut().unwrap() += self.total_steps - base * n;
                Ok(out)
            }
        }
    }

    /// Global steps at which each non-final trained stage ends.
    pub fn stage_boundaries(&self) -> Result<Vec<u64>> {
        let steps = self.stage_steps()?;
        let mut acc = 0;
        Ok(steps[..steps.len() - 1]
            .iter()
            .map(|s| {
                acc += s;
                acc
            })
            .collect())
    }

    /// Stage the network should be at when `step` steps are done.
    pub fn stage_for_step(&self, step: u64) -> Result<usize> {
        let passed = self.stage_boundaries()?.iter().filter(|&&b| b <= step).count();
        Ok(self.init_stage + passed)
    }
}

/// Cosine decay over the global step count.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    let total = cfg.total_steps.max(1) as f64;
    let x = (step as f64).min(total) / total;
    cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + (std::f64::consts::PI * x).cos())
}
