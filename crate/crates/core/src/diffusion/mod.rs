//! Cosine noise schedule, transformer denoiser, the five-term training loss,
//! the training loop and checkpoints.

mod checkpoint;
mod denoiser;
mod loss;
mod schedule;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use denoiser::{forward, param_specs, sinusoid, DenoiserParams, ModelSize, ParamSpec, HEIGHT_CENTER, HEIGHT_SPREAD};
pub use loss::{breakdown, LossBreakdown, LossContext, LossVars, LossWeights};
pub use schedule::{DiffusionSchedule, ScheduleKind, COSINE_OFFSET, DEFAULT_STEPS};
pub use train::{train, training_step, validation_loss, Batch, TrainConfig, TrainOutcome, Trainer};

#[cfg(test)]
mod tests;
