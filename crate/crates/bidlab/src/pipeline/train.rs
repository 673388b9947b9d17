//! Gradient-descent training of a sequence model on a trajectory dataset.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::TrainingSet;
use crate::error::{Error, Result};
use crate::model::{forward, training_loss, Checkpoint, ModelConfig, Params, TrainMode};
use crate::num::{AdamConfig, AdamState, Tape, Tensor};
use crate::pipeline::windows::{batch_from_windows, probe_windows, rtg_scale, sample_window};
use crate::seeding::{derive_seed, rng_for};

/// Optimization hyperparameters, independent of the model architecture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    #[serde(default)]
    pub weight_decay: f32,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 0.0,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be at least 1".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Record of one completed training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRun {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    pub dataset_digest: String,
    /// Filled in by callers that persist the checkpoint.
    pub checkpoint_path: Option<PathBuf>,
    /// Mean batch loss per epoch.
    pub loss_curve: Vec<f32>,
    /// Post-training loss on the deterministic probe batch; anyone holding
    /// the checkpoint, the dataset, and the seed can recompute it with
    /// [`probe_loss`].
    pub final_loss: f32,
}

/// Train a fresh model of the given mode on `set`.
///
/// All randomness (parameter init, window sampling, dropout) derives from
/// `seed`, so equal inputs produce bit-identical checkpoints.
pub fn train(
    mode: TrainMode,
    model: &ModelConfig,
    hp: &TrainParams,
    set: &TrainingSet,
    seed: u64,
) -> Result<(TrainRun, Checkpoint)> {
    model.validate()?;
    hp.validate()?;
    set.validate()?;
    if set.is_empty() {
        return Err(Error::Contract("cannot train on an empty dataset".into()));
    }
    for traj in &set.trajectories {
        if traj.steps.len() > model.max_timestep {
            return Err(Error::Config(format!(
                "trajectory has {} steps but the model indexes only {} timesteps",
                traj.steps.len(),
                model.max_timestep
            )));
        }
    }

    let scale = rtg_scale(set);
    let zero_rtg = mode == TrainMode::Bc;
    let mut params = Params::init(model, derive_seed(seed, "train-init", &[]))?;
    let mut adam = AdamState::new(AdamConfig {
        lr: hp.learning_rate,
        weight_decay: hp.weight_decay,
        ..AdamConfig::default()
    });
    let mut window_rng = rng_for(seed, "train-windows", &[]);
    let mut dropout_rng = rng_for(seed, "train-dropout", &[]);
    let steps_per_epoch = set.len().div_ceil(hp.batch_size).max(1);

    let mut loss_curve = Vec::with_capacity(hp.epochs);
    for epoch in 0..hp.epochs {
        let mut epoch_sum = 0.0f64;
        for step in 0..steps_per_epoch {
            let windows: Vec<(usize, usize)> = (0..hp.batch_size)
                .map(|_| sample_window(set, model.context_steps, &mut window_rng))
                .collect();
            let batch = batch_from_windows(set, &windows, model, scale, zero_rtg)?;

            let mut tape = Tape::new();
            let at = |e| located(e, epoch, step);
            let output = forward(
                &mut tape,
                model,
                &mut params,
                &batch,
                mode.token_order(),
                Some(&mut dropout_rng),
            )
            .map_err(at)?;
            let (root, breakdown) =
                training_loss(&mut tape, mode, &output, &batch, model.lambda).map_err(at)?;
            tape.backward(root)?;
            let mut named = params.named_mut();
            for (_, tensor) in named.iter_mut() {
                tensor.pull_grad(&tape)?;
            }
            let mut refs: Vec<(&str, &mut Tensor)> = named
                .iter_mut()
                .map(|(name, tensor)| (name.as_str(), &mut **tensor))
                .collect();
            adam.step(&mut refs)?;
            epoch_sum += f64::from(breakdown.total);
        }
        loss_curve.push((epoch_sum / steps_per_epoch as f64) as f32);
    }

    let checkpoint = Checkpoint {
        config: model.clone(),
        mode,
        rtg_scale: scale,
        params,
    };
    let final_loss = probe_loss(&checkpoint, set, seed, hp.batch_size)?;
    let run = TrainRun {
        mode,
        epochs: hp.epochs,
        batch_size: hp.batch_size,
        learning_rate: hp.learning_rate,
        seed,
        dataset_digest: set.digest(),
        checkpoint_path: None,
        loss_curve,
        final_loss,
    };
    Ok((run, checkpoint))
}

fn located(err: Error, epoch: usize, step: usize) -> Error {
    match err {
        Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}, step {step}: {msg}")),
        other => other,
    }
}

/// Loss of a checkpoint on the probe batch that `seed` pins down.
///
/// Dropout is off and the batch derivation is deterministic, so this
/// reproduces [`TrainRun::final_loss`] exactly from the saved artifacts.
pub fn probe_loss(
    checkpoint: &Checkpoint,
    set: &TrainingSet,
    seed: u64,
    batch_size: usize,
) -> Result<f32> {
    if set.is_empty() {
        return Err(Error::Contract("cannot probe an empty dataset".into()));
    }
    let mut rng = rng_for(seed, "train-probe", &[]);
    let windows: Vec<(usize, usize)> = (0..batch_size.max(1))
        .map(|_| sample_window(set, checkpoint.config.context_steps, &mut rng))
        .collect();
    let zero_rtg = checkpoint.mode == TrainMode::Bc;
    let batch = batch_from_windows(
        set,
        &windows,
        &checkpoint.config,
        checkpoint.rtg_scale,
        zero_rtg,
    )?;
    let mut params = checkpoint.params.clone();
    let mut tape = Tape::new();
    let output = forward(
        &mut tape,
        &checkpoint.config,
        &mut params,
        &batch,
        checkpoint.mode.token_order(),
        None,
    )?;
    let (_, breakdown) = training_loss(
        &mut tape,
        checkpoint.mode,
        &output,
        &batch,
        checkpoint.config.lambda,
    )?;
    Ok(breakdown.total)
}

/// Mean RTG-head prediction, in raw return units, over a fixed probe of
/// `n_windows` evenly spaced windows from `set`. Tracks how a model's
/// return estimate moves across self-training rounds.
pub fn mean_probe_rhat(checkpoint: &Checkpoint, set: &TrainingSet, n_windows: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Contract("cannot probe an empty dataset".into()));
    }
    let windows = probe_windows(set, n_windows);
    let zero_rtg = checkpoint.mode == TrainMode::Bc;
    let batch = batch_from_windows(
        set,
        &windows,
        &checkpoint.config,
        checkpoint.rtg_scale,
        zero_rtg,
    )?;
    let mut params = checkpoint.params.clone();
    let mut tape = Tape::new();
    let output = forward(
        &mut tape,
        &checkpoint.config,
        &mut params,
        &batch,
        checkpoint.mode.token_order(),
        None,
    )?;
    let preds = tape.values(output.rtg_pred);
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (value, &real) in preds.iter().zip(&batch.pad_mask) {
        if real {
            sum += f64::from(*value);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Contract("probe batch is all padding".into()));
    }
    Ok(sum / count as f64 * f64::from(checkpoint.rtg_scale))
}
