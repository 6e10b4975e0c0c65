//! Desk-scale training: schedule, optimiser, augmentation, noise and the
//! synthetic tone task.

mod adam;
mod augment;
mod config;
mod toy;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use augment::{specaugment, stream, variational_noise, SpecAugmentConfig};
pub use config::{lr_schedule, TrainConfig};
pub use toy::{generate, ToyTaskSpec, Utterance};
pub use trainer::{
    token_error_rate, toy_model_config, train_toy, BatchResult, MetricsRecord, RunFiles, ToyOutcome, ToyRunConfig,
    Trainer,
};
