//! Autoregressive inference: turning a trained checkpoint into a bid policy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{featurize, STATE_DIM};
use crate::error::{Error, Result};
use crate::model::{forward, Checkpoint, ModelConfig, Params, TokenBatch, TrainMode};
use crate::num::Tape;
use crate::sim::{AdvertiserConfig, BidPolicy, SimState, StepAggregate, A_MAX};

/// How the RTG token of the current step is filled at inference time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RtgConditioning {
    /// Condition on the model's own RTG estimate plus `noise`, both in
    /// normalized units. This is the self-conditioned mode of the reordered
    /// token layout.
    Predicted { noise: f64 },
    /// Condition on an externally chosen return-to-go in raw units, as the
    /// classic layout requires.
    Preset(f64),
}

/// What one inference call produced, all in raw environment units.
#[derive(Debug, Clone, Copy)]
pub struct StepInference {
    /// The model's own return-to-go estimate for the current step.
    pub rhat: f64,
    /// Bid coefficient, already clamped to the action bound.
    pub action: f64,
    /// RTG value that was actually written into the current token; feed it
    /// back as history on the next call.
    pub conditioned_rtg: f64,
}

/// Reusable inference state for one checkpoint.
///
/// Holds a private copy of the parameters so repeated calls do not clone
/// the whole model.
pub struct Inferencer {
    config: ModelConfig,
    mode: TrainMode,
    scale: f64,
    params: Params,
}

impl Inferencer {
    pub fn new(checkpoint: &Checkpoint) -> Inferencer {
        Inferencer {
            config: checkpoint.config.clone(),
            mode: checkpoint.mode,
            scale: f64::from(checkpoint.rtg_scale),
            params: checkpoint.params.clone(),
        }
    }

    pub fn mode(&self) -> TrainMode {
        self.mode
    }

    /// Raw-unit RTG normalization constant baked into the checkpoint.
    pub fn rtg_scale(&self) -> f64 {
        self.scale
    }

    /// Predict the action for the latest state.
    ///
    /// `states` covers steps `0..=t` of the running episode while `rtgs`
    /// and `actions` cover `0..t`, holding the conditioned RTGs and the
    /// executed actions of past steps in raw units. Only the trailing
    /// context window is fed to the model.
    pub fn infer(
        &mut self,
        states: &[[f32; STATE_DIM]],
        rtgs: &[f32],
        actions: &[f32],
        conditioning: RtgConditioning,
    ) -> Result<StepInference> {
        let t = states.len();
        if t == 0 {
            return Err(Error::Contract(
                "inference needs at least the current state".into(),
            ));
        }
        if rtgs.len() + 1 != t || actions.len() + 1 != t {
            return Err(Error::Contract(format!(
                "inconsistent history: {} states need {} past rtgs and actions, got {} and {}",
                t,
                t - 1,
                rtgs.len(),
                actions.len()
            )));
        }
        if self.mode == TrainMode::DtBaseline {
            if let RtgConditioning::Predicted { .. } = conditioning {
                return Err(Error::Config(
                    "dt_baseline has no RTG head; condition it on a preset schedule".into(),
                ));
            }
        }

        let window = t.min(self.config.context_steps);
        let lo = t - window;
        let zero_rtg = self.mode == TrainMode::Bc;
        let norm_rtg = |raw: f32| if zero_rtg { 0.0 } else { raw / self.scale as f32 };

        let mut batch = TokenBatch {
            batch: 1,
            steps: window,
            states: states[lo..].concat(),
            rtgs: rtgs[lo..].iter().map(|&r| norm_rtg(r)).collect(),
            actions: actions[lo..].iter().map(|&a| a / A_MAX as f32).collect(),
            timesteps: (lo..t).collect(),
            pad_mask: vec![true; window],
        };
        // Current-step slots; the action one is a placeholder the causal
        // mask keeps out of sight.
        batch.rtgs.push(0.0);
        batch.actions.push(0.0);

        let last = window - 1;
        let mut run = |rtg_now: f32| -> Result<(f32, f32)> {
            batch.rtgs[last] = if zero_rtg { 0.0 } else { rtg_now };
            let mut tape = Tape::new();
            let output = forward(
                &mut tape,
                &self.config,
                &mut self.params,
                &batch,
                self.mode.token_order(),
                None,
            )?;
            Ok((
                tape.values(output.rtg_pred)[last],
                tape.values(output.action_pred)[last],
            ))
        };

        let (rhat_norm, conditioned_norm, action_norm) = match conditioning {
            RtgConditioning::Predicted { noise } => {
                if !noise.is_finite() {
                    return Err(Error::Config(format!("non-finite RTG noise {noise}")));
                }
                let (rhat, _) = run(0.0)?;
                let conditioned = (f64::from(rhat) + noise) as f32;
                let (rhat_again, action) = run(conditioned)?;
                debug_assert_eq!(
                    rhat.to_bits(),
                    rhat_again.to_bits(),
                    "RTG head saw its own conditioning"
                );
                (rhat, conditioned, action)
            }
            RtgConditioning::Preset(raw) => {
                if !raw.is_finite() {
                    return Err(Error::Config(format!("non-finite preset RTG {raw}")));
                }
                let conditioned = (raw / self.scale) as f32;
                let (rhat, action) = run(conditioned)?;
                (rhat, conditioned, action)
            }
        };

        let written = if zero_rtg { 0.0 } else { f64::from(conditioned_norm) };
        Ok(StepInference {
            rhat: f64::from(rhat_norm) * self.scale,
            action: (f64::from(action_norm) * A_MAX).clamp(0.0, A_MAX),
            conditioned_rtg: written * self.scale,
        })
    }
}

/// One-shot convenience wrapper over [`Inferencer`].
pub fn infer_action(
    checkpoint: &Checkpoint,
    states: &[[f32; STATE_DIM]],
    rtgs: &[f32],
    actions: &[f32],
    conditioning: RtgConditioning,
) -> Result<StepInference> {
    Inferencer::new(checkpoint).infer(states, rtgs, actions, conditioning)
}

enum Conditioning {
    /// Self-conditioned, optionally with exploration noise on the RTG.
    Predicted {
        noise: Option<Normal<f64>>,
        per_step: bool,
        rng: ChaCha8Rng,
        episode_eps: f64,
    },
    /// Preset schedule: start at `initial` and walk down by realized reward.
    Schedule { initial: f64 },
}

/// A [`BidPolicy`] that queries a trained checkpoint every step, carrying
/// the growing token history across the episode.
pub struct ModelPolicy {
    inferencer: Inferencer,
    conditioning: Conditioning,
    states: Vec<[f32; STATE_DIM]>,
    rtgs: Vec<f32>,
    actions: Vec<f32>,
}

impl ModelPolicy {
    /// Self-conditioned policy without exploration noise.
    pub fn greedy(checkpoint: &Checkpoint) -> Result<ModelPolicy> {
        Self::predicted(checkpoint, None, true, ChaCha8Rng::seed_from_u64(0))
    }

    /// Self-conditioned policy adding `N(0, sigma^2)` noise to the
    /// normalized RTG, freshly per step or once per episode.
    pub fn with_noise(
        checkpoint: &Checkpoint,
        sigma: f64,
        per_step: bool,
        rng: ChaCha8Rng,
    ) -> Result<ModelPolicy> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Config(format!(
                "noise sigma must be non-negative, got {sigma}"
            )));
        }
        let noise = if sigma > 0.0 {
            Some(Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?)
        } else {
            None
        };
        Self::predicted(checkpoint, noise, per_step, rng)
    }

    /// Policy conditioned on a decrementing preset RTG schedule starting at
    /// `initial_rtg` raw units. The only option for classic-layout models,
    /// but valid for any mode.
    pub fn with_rtg_schedule(checkpoint: &Checkpoint, initial_rtg: f64) -> Result<ModelPolicy> {
        if !(initial_rtg.is_finite() && initial_rtg >= 0.0) {
            return Err(Error::Config(format!(
                "initial RTG must be non-negative, got {initial_rtg}"
            )));
        }
        Ok(ModelPolicy {
            inferencer: Inferencer::new(checkpoint),
            conditioning: Conditioning::Schedule {
                initial: initial_rtg,
            },
            states: Vec::new(),
            rtgs: Vec::new(),
            actions: Vec::new(),
        })
    }

    fn predicted(
        checkpoint: &Checkpoint,
        noise: Option<Normal<f64>>,
        per_step: bool,
        rng: ChaCha8Rng,
    ) -> Result<ModelPolicy> {
        if checkpoint.mode == TrainMode::DtBaseline {
            return Err(Error::Config(
                "dt_baseline has no RTG head; use with_rtg_schedule".into(),
            ));
        }
        Ok(ModelPolicy {
            inferencer: Inferencer::new(checkpoint),
            conditioning: Conditioning::Predicted {
                noise,
                per_step,
                rng,
                episode_eps: 0.0,
            },
            states: Vec::new(),
            rtgs: Vec::new(),
            actions: Vec::new(),
        })
    }
}

impl BidPolicy for ModelPolicy {
    fn begin_episode(&mut self) {
        self.states.clear();
        self.rtgs.clear();
        self.actions.clear();
        if let Conditioning::Predicted {
            noise: Some(normal),
            per_step: false,
            rng,
            episode_eps,
        } = &mut self.conditioning
        {
            *episode_eps = normal.sample(rng);
        }
    }

    fn act(
        &mut self,
        state: &SimState,
        history: &[StepAggregate],
        adv: &AdvertiserConfig,
    ) -> Result<f64> {
        self.states.push(featurize(state, history, adv));
        let conditioning = match &mut self.conditioning {
            Conditioning::Predicted {
                noise,
                per_step,
                rng,
                episode_eps,
            } => {
                let eps = match noise {
                    Some(normal) if *per_step => normal.sample(rng),
                    Some(_) => *episode_eps,
                    None => 0.0,
                };
                RtgConditioning::Predicted { noise: eps }
            }
            Conditioning::Schedule { initial } => {
                let realized: f64 = history.iter().map(|a| a.conversions as f64).sum();
                RtgConditioning::Preset((*initial - realized).max(0.0))
            }
        };
        let out = self
            .inferencer
            .infer(&self.states, &self.rtgs, &self.actions, conditioning)?;
        self.rtgs.push(out.conditioned_rtg as f32);
        self.actions.push(out.action as f32);
        Ok(out.action)
    }
}
