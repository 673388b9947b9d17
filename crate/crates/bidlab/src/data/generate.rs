//! Synthetic offline datasets from a palette of mixed-quality behavior
//! policies: deliberately spanning timid, reasonable, and overheated
//! bidding so selection has something to choose between.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::features::trajectory_from_episode;
use crate::data::types::{env_digest, Provenance, TrainingSet, Trajectory};
use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::seeding::{derive_seed, rng_for};
use crate::sim::{
    run_episode, AdvertiserConfig, BidPolicy, ConstantPolicy, OpportunityModel, Roster, SimState,
    StepAggregate, A_MAX,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BehaviorKind {
    Constant(f64),
    Pacer,
}

/// One behavior policy of the generation palette.
#[derive(Debug, Clone, PartialEq)]
pub struct PaletteEntry {
    pub name: String,
    pub kind: BehaviorKind,
    /// Per-step Gaussian jitter on the coefficient; 0 bids exactly.
    pub noise_sigma: f64,
}

impl PaletteEntry {
    fn new(name: &str, kind: BehaviorKind, noise_sigma: f64) -> Self {
        PaletteEntry {
            name: name.to_string(),
            kind,
            noise_sigma,
        }
    }
}

/// The default palette: three constants and a pacing controller, each in a
/// clean and a noisy (sigma 0.3) variant.
pub fn behavior_palette() -> Vec<PaletteEntry> {
    let base = [
        ("const-0.3", BehaviorKind::Constant(0.3)),
        ("const-0.8", BehaviorKind::Constant(0.8)),
        ("const-1.5", BehaviorKind::Constant(1.5)),
        ("pacer", BehaviorKind::Pacer),
    ];
    let mut palette: Vec<PaletteEntry> = base
        .iter()
        .map(|(name, kind)| PaletteEntry::new(name, *kind, 0.0))
        .collect();
    palette.extend(
        base.iter()
            .map(|(name, kind)| PaletteEntry::new(&format!("{name}-noisy"), *kind, 0.3)),
    );
    palette
}

/// Proportional budget pacer: nudges its coefficient up when spend trails
/// the linear schedule and down when it runs ahead.
#[derive(Debug, Clone)]
pub struct PacerPolicy {
    pub gain: f64,
    coefficient: f64,
}

impl Default for PacerPolicy {
    fn default() -> Self {
        PacerPolicy {
            gain: 4.0,
            coefficient: 1.0,
        }
    }
}

impl BidPolicy for PacerPolicy {
    fn begin_episode(&mut self) {
        self.coefficient = 1.0;
    }

    fn act(
        &mut self,
        state: &SimState,
        _history: &[StepAggregate],
        adv: &AdvertiserConfig,
    ) -> Result<f64> {
        let planned = state.t as f64 / adv.episode_steps as f64;
        let actual = state.cum_cost / adv.budget;
        self.coefficient =
            (self.coefficient * (1.0 + self.gain * (planned - actual))).clamp(0.05, A_MAX);
        Ok(self.coefficient)
    }
}

/// Adds clamped Gaussian jitter to another policy's coefficient.
pub struct NoisyPolicy<P> {
    inner: P,
    noise: Normal<f64>,
    rng: ChaCha8Rng,
}

impl<P: BidPolicy> NoisyPolicy<P> {
    pub fn new(inner: P, sigma: f64, rng: ChaCha8Rng) -> Result<Self> {
        let noise = Normal::new(0.0, sigma)
            .map_err(|e| Error::Config(format!("noise sigma {sigma}: {e}")))?;
        Ok(NoisyPolicy { inner, noise, rng })
    }
}

impl<P: BidPolicy> BidPolicy for NoisyPolicy<P> {
    fn begin_episode(&mut self) {
        self.inner.begin_episode();
    }

    fn act(
        &mut self,
        state: &SimState,
        history: &[StepAggregate],
        adv: &AdvertiserConfig,
    ) -> Result<f64> {
        let base = self.inner.act(state, history, adv)?;
        Ok((base + self.noise.sample(&mut self.rng)).clamp(0.0, A_MAX))
    }
}

fn make_policy(entry: &PaletteEntry, noise_rng: ChaCha8Rng) -> Result<Box<dyn BidPolicy>> {
    let base: Box<dyn BidPolicy> = match entry.kind {
        BehaviorKind::Constant(c) => Box::new(ConstantPolicy(c)),
        BehaviorKind::Pacer => Box::new(PacerPolicy::default()),
    };
    if entry.noise_sigma > 0.0 {
        Ok(Box::new(NoisyPolicy::new(base, entry.noise_sigma, noise_rng)?))
    } else {
        Ok(base)
    }
}

/// Roll every palette policy for every advertiser, `episodes_per_policy`
/// times each, into a first-iteration training set.
pub fn generate_with_palette(
    env: &OpportunityModel,
    roster: &Roster,
    palette: &[PaletteEntry],
    episodes_per_policy: usize,
    seed: u64,
) -> Result<TrainingSet> {
    env.validate()?;
    roster.validate()?;
    if palette.is_empty() {
        return Err(Error::Contract("behavior palette is empty".into()));
    }
    if episodes_per_policy == 0 {
        return Err(Error::Contract("episodes_per_policy must be at least 1".into()));
    }

    let mut jobs = Vec::new();
    for pi in 0..palette.len() {
        for ai in 0..roster.advertisers.len() {
            for rep in 0..episodes_per_policy {
                jobs.push((pi, ai, rep));
            }
        }
    }
    let results: Vec<Result<Trajectory>> = map_indexed(jobs.len(), |j| {
        let (pi, ai, rep) = jobs[j];
        let coords = [pi as u64, ai as u64, rep as u64];
        let episode_seed = derive_seed(seed, "behavior-episode", &coords);
        let mut policy = make_policy(&palette[pi], rng_for(seed, "behavior-noise", &coords))?;
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        let episode = run_episode(policy.as_mut(), env, &roster.advertisers[ai], &mut rng)?;
        trajectory_from_episode(
            &episode,
            episode_seed,
            Provenance::Behavior {
                policy: palette[pi].name.clone(),
            },
        )
    });
    let trajectories = results.into_iter().collect::<Result<Vec<_>>>()?;

    let set = TrainingSet {
        iteration: 1,
        parent_digest: String::new(),
        env_digest: env_digest(env, roster),
        trajectories,
    };
    set.validate()?;
    Ok(set)
}

/// [`generate_with_palette`] over the default eight-policy palette.
pub fn generate_behavior_dataset(
    env: &OpportunityModel,
    roster: &Roster,
    episodes_per_policy: usize,
    seed: u64,
) -> Result<TrainingSet> {
    generate_with_palette(env, roster, &behavior_palette(), episodes_per_policy, seed)
}
