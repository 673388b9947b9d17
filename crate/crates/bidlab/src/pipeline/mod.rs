//! Training runs, checkpoint inference, rollout generation, and the
//! iterative self-training loop that ties them together.

mod generate;
mod infer;
mod iterate;
mod train;
mod windows;

pub use generate::{generate_trajectories, NoiseConfig};
pub use infer::{infer_action, Inferencer, ModelPolicy, RtgConditioning, StepInference};
pub use iterate::{
    iterate, IterateConfig, IterationLog, IterationOutcome, ReturnSummary, RoundLog,
    SUMMARY_QUANTILES,
};
pub use train::{mean_probe_rhat, probe_loss, train, TrainParams, TrainRun};
pub use windows::{batch_from_windows, probe_windows, rtg_scale, sample_window};
