//! Progressive training: schedule, batching, Adam and checkpointing.

mod adam;
mod config;
mod run;
mod step;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use config::{lr_at, TrainConfig};
pub use run::{metrics_line, run, RunOptions, METRICS_HEADER};
pub use step::{loss_and_grad, loss_value, regularization_depths, train_step, LossBreakdown, StepMetrics, Trainer, TrainingSet};
pub(crate) use step::map_shards;
