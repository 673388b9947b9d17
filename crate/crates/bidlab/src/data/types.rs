//! Trajectory containers, provenance tags, digests, and set nesting.

use std::collections::HashSet;
use std::fmt;

use sha2::{Digest, Sha256};

use crate::data::store::trajectory_lines;
use crate::error::{Error, Result};
use crate::sim::{AdvertiserConfig, OpportunityModel, Roster, A_MAX};

/// Where a trajectory came from: a scripted behavior policy, or a model
/// rollout produced while iterating on training set k.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Provenance {
    Behavior { policy: String },
    Generated { iter: u32 },
}

impl Provenance {
    pub fn tag(&self) -> String {
        match self {
            Provenance::Behavior { policy } => format!("behavior:{policy}"),
            Provenance::Generated { iter } => format!("generated:iter={iter}"),
        }
    }

    pub fn parse_tag(s: &str) -> Result<Self> {
        if let Some(policy) = s.strip_prefix("behavior:") {
            if policy.is_empty() {
                return Err(Error::Schema("behavior provenance needs a policy name".into()));
            }
            return Ok(Provenance::Behavior {
                policy: policy.to_string(),
            });
        }
        if let Some(iter) = s.strip_prefix("generated:iter=") {
            let iter = iter
                .parse::<u32>()
                .map_err(|e| Error::Schema(format!("malformed provenance tag {s:?}: {e}")))?;
            return Ok(Provenance::Generated { iter });
        }
        Err(Error::Schema(format!("malformed provenance tag {s:?}")))
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

/// One decision step of a stored trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    /// Six features: time fraction, budget fraction, spend rate against the
    /// linear schedule, CPA ratio capped at 5, recent win rate, and recent
    /// mean opponent price over the CPA target.
    pub state: [f32; 6],
    /// Bid coefficient in `[0, A_MAX]`.
    pub action: f32,
    /// Conversions earned by this step.
    pub reward: f32,
    /// Suffix sum of rewards from this step to the end.
    pub rtg: f32,
}

/// One advertiser episode with featurized states and return-to-go labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub adv: AdvertiserConfig,
    /// Episode seed; `(seed, provenance)` identifies a trajectory.
    pub seed: u64,
    pub provenance: Provenance,
    pub episode_return: f32,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn key(&self) -> (u64, String) {
        (self.seed, self.provenance.tag())
    }

    /// Digest of the canonical file representation of this trajectory.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(trajectory_lines(self).as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.adv.validate()?;
        if let Provenance::Behavior { policy } = &self.provenance {
            if policy.is_empty() {
                return Err(Error::Contract(
                    "behavior provenance needs a policy name".into(),
                ));
            }
        }
        let fail = |msg: String| {
            Err(Error::Contract(format!(
                "trajectory (seed {}, {}): {msg}",
                self.seed, self.provenance
            )))
        };
        if self.steps.len() != self.adv.episode_steps {
            return fail(format!(
                "{} steps, advertiser {} runs {}",
                self.steps.len(),
                self.adv.name,
                self.adv.episode_steps
            ));
        }
        let a_max = A_MAX as f32;
        for (t, step) in self.steps.iter().enumerate() {
            let finite = step.state.iter().all(|v| v.is_finite())
                && step.action.is_finite()
                && step.reward.is_finite()
                && step.rtg.is_finite();
            if !finite {
                return fail(format!("non-finite value at step {t}"));
            }
            for i in [0usize, 1, 4] {
                if !(0.0..=1.0).contains(&step.state[i]) {
                    return fail(format!(
                        "state[{i}] = {} at step {t} outside [0,1]",
                        step.state[i]
                    ));
                }
            }
            if !(0.0..=a_max).contains(&step.action) {
                return fail(format!("action {} at step {t} outside [0,{a_max}]", step.action));
            }
            if step.reward < 0.0 {
                return fail(format!("negative reward {} at step {t}", step.reward));
            }
        }
        // RTG must equal the f32 image of the f64 suffix sums of the rewards.
        let mut acc = 0.0f64;
        for (t, step) in self.steps.iter().enumerate().rev() {
            acc += f64::from(step.reward);
            if step.rtg.to_bits() != (acc as f32).to_bits() {
                return fail(format!(
                    "rtg {} at step {t} does not equal the suffix sum {acc}",
                    step.rtg
                ));
            }
        }
        if self.episode_return.to_bits() != self.steps[0].rtg.to_bits() {
            return fail(format!(
                "episode_return {} != first rtg {}",
                self.episode_return, self.steps[0].rtg
            ));
        }
        Ok(())
    }
}

/// The iteration-indexed trajectory collection T^(k).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub iteration: u32,
    /// Content digest of T^(k-1); empty at the first iteration.
    pub parent_digest: String,
    /// Digest of the environment and roster the episodes ran against.
    pub env_digest: String,
    pub trajectories: Vec<Trajectory>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn returns(&self) -> impl Iterator<Item = f64> + '_ {
        self.trajectories.iter().map(|t| f64::from(t.episode_return))
    }

    /// Content digest: a hash over the per-trajectory digests in order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.trajectories {
            h.update(t.digest().as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn validate(&self) -> Result<()> {
        if self.iteration == 0 {
            return Err(Error::Contract("training set iteration starts at 1".into()));
        }
        if (self.iteration == 1) != self.parent_digest.is_empty() {
            return Err(Error::Contract(format!(
                "iteration {} with parent digest {:?}: only the first set has no parent",
                self.iteration, self.parent_digest
            )));
        }
        let mut keys = HashSet::new();
        for t in &self.trajectories {
            t.validate()?;
            if !keys.insert(t.key()) {
                return Err(Error::Duplicate(format!(
                    "seed {} with provenance {}",
                    t.seed, t.provenance
                )));
            }
        }
        Ok(())
    }
}

/// Digest binding a dataset to the market and roster that produced it.
pub fn env_digest(env: &OpportunityModel, roster: &Roster) -> String {
    let payload = serde_json::to_string(&(env, roster)).expect("env and roster serialize");
    hex::encode(Sha256::digest(payload.as_bytes()))
}

/// Grow T^(k) into T^(k+1) by appending selected rollout trajectories.
///
/// Selected trajectories must carry `generated:iter=k` provenance for the
/// parent's k, and no `(seed, provenance)` pair may repeat in the child.
pub fn merge(parent: &TrainingSet, selected: Vec<Trajectory>) -> Result<TrainingSet> {
    parent.validate()?;
    for t in &selected {
        t.validate()?;
        match t.provenance {
            Provenance::Generated { iter } if iter == parent.iteration => {}
            _ => {
                return Err(Error::Contract(format!(
                    "merge into iteration {} requires generated:iter={} provenance, got {}",
                    parent.iteration + 1,
                    parent.iteration,
                    t.provenance
                )))
            }
        }
    }
    let mut keys: HashSet<(u64, String)> =
        parent.trajectories.iter().map(Trajectory::key).collect();
    for t in &selected {
        if !keys.insert(t.key()) {
            return Err(Error::Duplicate(format!(
                "seed {} with provenance {}",
                t.seed, t.provenance
            )));
        }
    }
    let mut trajectories = parent.trajectories.clone();
    trajectories.extend(selected);
    Ok(TrainingSet {
        iteration: parent.iteration + 1,
        parent_digest: parent.digest(),
        env_digest: parent.env_digest.clone(),
        trajectories,
    })
}

/// Check the nesting invariant T^(k) ⊂ T^(k+1) by digest containment.
pub fn verify_nesting(parent: &TrainingSet, child: &TrainingSet) -> Result<()> {
    if child.parent_digest != parent.digest() {
        return Err(Error::Contract(format!(
            "child records parent digest {}, parent has {}",
            child.parent_digest,
            parent.digest()
        )));
    }
    let child_digests: HashSet<String> =
        child.trajectories.iter().map(Trajectory::digest).collect();
    for t in &parent.trajectories {
        if !child_digests.contains(&t.digest()) {
            return Err(Error::Contract(format!(
                "parent trajectory (seed {}, {}) is missing from the child",
                t.seed, t.provenance
            )));
        }
    }
    Ok(())
}
