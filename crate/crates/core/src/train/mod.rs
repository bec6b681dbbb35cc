//! A tiny multi-domain pose network trained on synthetic stick figures.
//!
//! A shared two-layer convolutional backbone feeds one 1x1 head per domain.
//! Losses, gradients and SGD are implemented by hand in `f64`.

mod benchmark;
mod checkpoint;
mod data;
mod loss;
mod network;
mod schedule;

pub use benchmark::{DomainData, ToyBenchmark};
pub use checkpoint::{BlockEntry, Manifest};
pub use data::{gen_synthetic, latent_pose, DomainSpec, Sample};
pub use loss::{loss_l2_masked, loss_ohkm, per_joint_mse, LossSpec};
pub use network::{Block, Features, Gradients, ToyConfig, ToyNetwork};
pub use schedule::{
    heldout_error, predict, train, Datasets, LogEntry, LossSwitch, PresetOptions, Sampling, Stage, TrainOutcome,
    TrainSchedule, MERGED_HEAD, PRESETS,
};
