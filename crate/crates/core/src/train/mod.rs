//! Run configuration, the pretraining loop and checkpoints.

mod checkpoint;
mod config;
mod run;

pub use checkpoint::{Checkpoint, CheckpointHeader, CKPT_MAGIC, CKPT_VERSION};
pub use config::{RunConfig, TrainConfig, GRID_ARMS, PRESETS};
pub use run::{
    encoder_from_checkpoint, read_metrics, run_pretrain, trajectory_hash, PretrainOutcome, StepMetrics, TrainData,
    Trainer, CONFIG_FILE, LAST_CHECKPOINT, METRICS_FILE,
};
