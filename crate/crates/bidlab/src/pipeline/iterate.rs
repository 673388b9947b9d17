//! The self-training loop: train, roll out, select elites, grow the data.

use serde::{Deserialize, Serialize};

use crate::data::{
    env_digest, generate_behavior_dataset, merge, percentile, select_top, BucketStat, TrainingSet,
};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, ModelConfig, TrainMode};
use crate::pipeline::generate::{generate_trajectories, NoiseConfig};
use crate::pipeline::train::{mean_probe_rhat, train, TrainParams, TrainRun};
use crate::seeding::derive_seed;
use crate::sim::{OpportunityModel, Roster};

/// Percentiles tracked in every round's return summary.
pub const SUMMARY_QUANTILES: [f64; 5] = [10.0, 25.0, 50.0, 75.0, 90.0];

/// Probe windows used for the cross-round RTG-head trace.
const PROBE_WINDOWS: usize = 16;

/// Everything the loop needs besides the environment and a seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterateConfig {
    /// Number of train-generate-select rounds.
    pub rounds: u32,
    /// Behavior episodes per (policy, advertiser) when the loop has to
    /// build its own first dataset.
    pub episodes_per_policy: usize,
    /// Rollout episodes per advertiser in each generation phase.
    pub episodes_per_advertiser: usize,
    /// Per-bucket selection cut, in percent.
    pub select_percentile: f64,
    pub noise: NoiseConfig,
    pub train: TrainParams,
}

impl Default for IterateConfig {
    fn default() -> Self {
        IterateConfig {
            rounds: 3,
            episodes_per_policy: 4,
            episodes_per_advertiser: 16,
            select_percentile: 70.0,
            noise: NoiseConfig::default(),
            train: TrainParams::default(),
        }
    }
}

impl IterateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if self.episodes_per_policy == 0 || self.episodes_per_advertiser == 0 {
            return Err(Error::Config("episode counts must be at least 1".into()));
        }
        if !(self.select_percentile > 0.0 && self.select_percentile < 100.0) {
            return Err(Error::Config(format!(
                "select_percentile must lie strictly inside (0,100), got {}",
                self.select_percentile
            )));
        }
        self.noise.validate()?;
        self.train.validate()
    }
}

/// Return statistics of one dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReturnSummary {
    pub size: usize,
    pub mean: f64,
    pub median: f64,
    /// `(percentile, value)` pairs over [`SUMMARY_QUANTILES`].
    pub quantiles: Vec<(f64, f64)>,
}

impl ReturnSummary {
    pub fn of(set: &TrainingSet) -> Result<ReturnSummary> {
        let returns: Vec<f64> = set.returns().collect();
        if returns.is_empty() {
            return Err(Error::Contract("summary of an empty dataset".into()));
        }
        let mean = returns.iter().sum::<f64>() / returns.len() as f64;
        let quantiles = SUMMARY_QUANTILES
            .iter()
            .map(|&p| Ok((p, percentile(&returns, p)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ReturnSummary {
            size: returns.len(),
            mean,
            median: percentile(&returns, 50.0)?,
            quantiles,
        })
    }
}

/// What one round did to the dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundLog {
    /// Iteration number of the dataset this round trained on.
    pub k: u32,
    /// Final probe loss of the round's model.
    pub train_loss: f32,
    /// Mean RTG-head prediction on the fixed first-dataset probe, raw units.
    pub probe_rhat: f64,
    /// Exploration noise used during generation.
    pub sigma: f64,
    pub generated: usize,
    pub selected: usize,
    pub thresholds: Vec<BucketStat>,
    pub warnings: Vec<String>,
    /// Returns of the merged dataset this round handed to the next.
    pub dataset: ReturnSummary,
}

/// Full history of one `iterate` call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationLog {
    pub seed: u64,
    pub initial: ReturnSummary,
    pub rounds: Vec<RoundLog>,
}

/// The loop's artifacts: every dataset generation plus the last model.
#[derive(Debug)]
pub struct IterationOutcome {
    pub log: IterationLog,
    /// The model trained in the final round, and therefore on the largest
    /// dataset that itself got trained on.
    pub final_checkpoint: Checkpoint,
    pub final_run: TrainRun,
    /// Datasets in iteration order, starting with the initial one and
    /// ending with the final merge (which no model has seen).
    pub sets: Vec<TrainingSet>,
}

/// Run `config.rounds` rounds of quantile-regression self-training.
///
/// Each round trains a fresh model on the current dataset, rolls it out
/// with annealed RTG noise, keeps the rollouts that beat their bucket's
/// return percentile, and merges them in. With a single round the selection
/// step degenerates: the returned checkpoint is trained purely on the
/// initial data and the merge is only logged.
///
/// Passing `initial` resumes from an existing dataset; otherwise a behavior
/// dataset is generated first. Everything derives from `seed`.
pub fn iterate(
    env: &OpportunityModel,
    roster: &Roster,
    model: &ModelConfig,
    config: &IterateConfig,
    initial: Option<TrainingSet>,
    seed: u64,
) -> Result<IterationOutcome> {
    env.validate()?;
    roster.validate()?;
    model.validate()?;
    config.validate()?;

    let first = match initial {
        Some(set) => {
            set.validate()?;
            if set.is_empty() {
                return Err(Error::Contract("initial dataset is empty".into()));
            }
            let expected = env_digest(env, roster);
            if !set.env_digest.is_empty() && set.env_digest != expected {
                return Err(Error::Contract(format!(
                    "initial dataset came from a different environment: digest {} vs {}",
                    set.env_digest, expected
                )));
            }
            set
        }
        None => generate_behavior_dataset(
            env,
            roster,
            config.episodes_per_policy,
            derive_seed(seed, "iterate-behavior", &[]),
        )?,
    };

    let mut log = IterationLog {
        seed,
        initial: ReturnSummary::of(&first)?,
        rounds: Vec::with_capacity(config.rounds as usize),
    };
    let mut sets = vec![first];
    let mut last_model: Option<(TrainRun, Checkpoint)> = None;

    for _ in 0..config.rounds {
        let current = sets.last().expect("starts non-empty");
        let k = current.iteration;

        let (run, checkpoint) = train(
            TrainMode::Rhat,
            model,
            &config.train,
            current,
            derive_seed(seed, "iterate-train", &[u64::from(k)]),
        )?;
        let probe_rhat = mean_probe_rhat(&checkpoint, &sets[0], PROBE_WINDOWS)?;

        let sigma = config.noise.sigma_at(k);
        let candidates = generate_trajectories(
            &checkpoint,
            env,
            roster,
            config.episodes_per_advertiser,
            &config.noise,
            k,
            derive_seed(seed, "iterate-generate", &[u64::from(k)]),
        )?;
        let generated = candidates.len();
        let selection = select_top(candidates, current, config.select_percentile)?;
        let selected = selection.kept.len();
        let next = merge(current, selection.kept)?;

        log.rounds.push(RoundLog {
            k,
            train_loss: run.final_loss,
            probe_rhat,
            sigma,
            generated,
            selected,
            thresholds: selection.stats,
            warnings: selection.warnings,
            dataset: ReturnSummary::of(&next)?,
        });
        sets.push(next);
        last_model = Some((run, checkpoint));
    }

    let (final_run, final_checkpoint) = last_model.expect("rounds >= 1");
    Ok(IterationOutcome {
        log,
        final_checkpoint,
        final_run,
        sets,
    })
}
