//! Rolling a trained policy through the simulator to mint new trajectories.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{trajectory_from_episode, Provenance, Trajectory};
use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::model::{Checkpoint, TrainMode};
use crate::pipeline::infer::ModelPolicy;
use crate::seeding::{derive_seed, rng_for};
use crate::sim::{run_episode, OpportunityModel, Roster};

/// Exploration-noise schedule on the conditioned RTG, annealed per round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Standard deviation at round 1, in normalized RTG units.
    pub sigma0: f64,
    /// Multiplicative decay per round, in (0, 1].
    pub decay: f64,
    /// Draw a fresh epsilon every step instead of once per episode.
    #[serde(default = "default_per_step")]
    pub per_step: bool,
}

fn default_per_step() -> bool {
    true
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sigma0: 0.1,
            decay: 0.8,
            per_step: true,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0.is_finite() && self.sigma0 >= 0.0) {
            return Err(Error::Config(format!(
                "sigma0 must be non-negative, got {}",
                self.sigma0
            )));
        }
        if !(self.decay.is_finite() && self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!(
                "decay must lie in (0, 1], got {}",
                self.decay
            )));
        }
        Ok(())
    }

    /// Noise level at self-training round `k` (1-based).
    pub fn sigma_at(&self, k: u32) -> f64 {
        self.sigma0 * self.decay.powi(k as i32 - 1)
    }
}

/// Roll the checkpointed policy over every advertiser, tagging the output
/// as generated in iteration `iter`.
///
/// Episodes run in parallel; each draws its environment and noise streams
/// from seeds derived per (advertiser, repetition), so the result does not
/// depend on scheduling.
pub fn generate_trajectories(
    checkpoint: &Checkpoint,
    env: &OpportunityModel,
    roster: &Roster,
    episodes_per_advertiser: usize,
    noise: &NoiseConfig,
    iter: u32,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    env.validate()?;
    roster.validate()?;
    noise.validate()?;
    if checkpoint.mode == TrainMode::DtBaseline {
        return Err(Error::Config(
            "generation needs a self-predicted RTG; dt_baseline cannot provide one".into(),
        ));
    }
    if episodes_per_advertiser == 0 {
        return Err(Error::Config("episodes_per_advertiser must be at least 1".into()));
    }
    if iter == 0 {
        return Err(Error::Config("iteration numbering starts at 1".into()));
    }

    let sigma = noise.sigma_at(iter);
    let advertisers = &roster.advertisers;
    let jobs: Vec<(usize, usize)> = (0..advertisers.len())
        .flat_map(|ai| (0..episodes_per_advertiser).map(move |rep| (ai, rep)))
        .collect();

    let results: Vec<Result<Trajectory>> = map_indexed(jobs.len(), |j| {
        let (ai, rep) = jobs[j];
        let coords = [ai as u64, rep as u64];
        let episode_seed = derive_seed(seed, "generate-episode", &coords);
        let noise_rng = rng_for(seed, "generate-noise", &coords);
        let mut policy = ModelPolicy::with_noise(checkpoint, sigma, noise.per_step, noise_rng)?;
        let mut env_rng = ChaCha8Rng::seed_from_u64(episode_seed);
        let episode = run_episode(&mut policy, env, &advertisers[ai], &mut env_rng)?;
        trajectory_from_episode(&episode, episode_seed, Provenance::Generated { iter })
    });
    results.into_iter().collect()
}
