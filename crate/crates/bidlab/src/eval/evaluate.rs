//! Seeded policy evaluation across CPA-variant environments.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TrainingSet;
use crate::error::{Error, Result};
use crate::eval::metrics::score_episode;
use crate::exec::map_indexed;
use crate::model::{Checkpoint, TrainMode};
use crate::pipeline::ModelPolicy;
use crate::seeding::derive_seed;
use crate::sim::{run_episode, BidPolicy, ConstantPolicy, OpportunityModel, Roster};

/// Evaluation environments: the dataset's own CPA targets and two stressed
/// variants with the targets scaled up and down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Ds1,
    Ds2HighCpa,
    Ds3LowCpa,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Ds1, Variant::Ds2HighCpa, Variant::Ds3LowCpa];

    /// Factor applied to every advertiser's CPA target.
    pub fn multiplier(self) -> f64 {
        match self {
            Variant::Ds1 => 1.0,
            Variant::Ds2HighCpa => 1.5,
            Variant::Ds3LowCpa => 0.6,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Ds1 => "ds1",
            Variant::Ds2HighCpa => "ds2_high_cpa",
            Variant::Ds3LowCpa => "ds3_low_cpa",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "ds1" => Ok(Variant::Ds1),
            "ds2" | "ds2_high_cpa" => Ok(Variant::Ds2HighCpa),
            "ds3" | "ds3_low_cpa" => Ok(Variant::Ds3LowCpa),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One evaluated episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub advertiser: String,
    pub seed: u64,
    pub score: f64,
    pub conversions: f64,
    pub spend: f64,
    pub budget_ratio: f64,
    pub c_a: f64,
    pub penalty: f64,
}

/// Aggregated evaluation of one policy on one variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub episodes: usize,
    pub mean_score: f64,
    pub mean_conversions: f64,
    pub mean_budget_ratio: f64,
    pub mean_penalty: f64,
    /// Pooled spend over pooled conversions; 0 when nothing converted.
    pub realized_cpa: f64,
    pub per_episode: Vec<EpisodeRecord>,
}

/// Seeds of every trajectory in the given datasets, for contamination
/// checks against evaluation episodes.
pub fn training_seeds<'a>(sets: impl IntoIterator<Item = &'a TrainingSet>) -> HashSet<u64> {
    sets.into_iter()
        .flat_map(|s| s.trajectories.iter().map(|t| t.seed))
        .collect()
}

fn episode_seed(eval_seed: u64, variant: Variant, ai: usize, rep: usize) -> u64 {
    derive_seed(
        eval_seed,
        "eval-episode",
        &[variant as u64, ai as u64, rep as u64],
    )
}

/// Run a freshly built policy through seeded evaluation episodes on each
/// variant and aggregate the scores.
///
/// Every episode seed is checked against `forbidden` (typically
/// [`training_seeds`] of everything the policy ever trained on) before
/// anything runs; an overlap aborts the evaluation.
pub fn evaluate_with<P, F>(
    make_policy: F,
    env: &OpportunityModel,
    roster: &Roster,
    variants: &[Variant],
    episodes_per_advertiser: usize,
    eval_seed: u64,
    forbidden: &HashSet<u64>,
) -> Result<Vec<EvalReport>>
where
    P: BidPolicy,
    F: Fn() -> Result<P> + Sync,
{
    env.validate()?;
    roster.validate()?;
    if variants.is_empty() {
        return Err(Error::Config("no variants to evaluate".into()));
    }
    if episodes_per_advertiser == 0 {
        return Err(Error::Config("episodes_per_advertiser must be at least 1".into()));
    }

    let mut jobs = Vec::new();
    for &variant in variants {
        for ai in 0..roster.advertisers.len() {
            for rep in 0..episodes_per_advertiser {
                let seed = episode_seed(eval_seed, variant, ai, rep);
                if forbidden.contains(&seed) {
                    return Err(Error::Contamination(format!(
                        "episode seed {seed} (variant {variant}, advertiser {}, repetition {rep}) \
                         appears in the training data",
                        roster.advertisers[ai].name
                    )));
                }
                jobs.push((variant, ai, rep, seed));
            }
        }
    }

    let scored: Vec<Result<EpisodeRecord>> = map_indexed(jobs.len(), |j| {
        let (variant, ai, _, seed) = jobs[j];
        let adv = roster.advertisers[ai].with_multiplier(variant.multiplier());
        let mut policy = make_policy()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let episode = run_episode(&mut policy, env, &adv, &mut rng)?;
        let score = score_episode(episode.all_events(), &adv)?;
        Ok(EpisodeRecord {
            advertiser: adv.name.clone(),
            seed,
            score: score.score,
            conversions: score.conversions,
            spend: score.spend,
            budget_ratio: score.budget_ratio,
            c_a: score.c_a,
            penalty: score.penalty,
        })
    });
    let records = scored.into_iter().collect::<Result<Vec<_>>>()?;

    let mut reports = Vec::with_capacity(variants.len());
    for (vi, &variant) in variants.iter().enumerate() {
        let per_variant = roster.advertisers.len() * episodes_per_advertiser;
        let slice = &records[vi * per_variant..(vi + 1) * per_variant];
        reports.push(aggregate(variant, slice));
    }
    Ok(reports)
}

fn aggregate(variant: Variant, records: &[EpisodeRecord]) -> EvalReport {
    let n = records.len() as f64;
    let spend: f64 = records.iter().map(|r| r.spend).sum();
    let conversions: f64 = records.iter().map(|r| r.conversions).sum();
    EvalReport {
        variant,
        episodes: records.len(),
        mean_score: records.iter().map(|r| r.score).sum::<f64>() / n,
        mean_conversions: conversions / n,
        mean_budget_ratio: records.iter().map(|r| r.budget_ratio).sum::<f64>() / n,
        mean_penalty: records.iter().map(|r| r.penalty).sum::<f64>() / n,
        realized_cpa: if conversions > 0.0 {
            spend / conversions
        } else {
            0.0
        },
        per_episode: records.to_vec(),
    }
}

/// Evaluate a trained checkpoint.
///
/// Reordered-layout models condition on their own RTG estimate;
/// `rtg_schedule` supplies the initial preset RTG that classic-layout
/// models need instead (and is accepted, though rarely wanted, for any
/// mode).
pub fn evaluate_policy(
    checkpoint: &Checkpoint,
    env: &OpportunityModel,
    roster: &Roster,
    variants: &[Variant],
    episodes_per_advertiser: usize,
    eval_seed: u64,
    forbidden: &HashSet<u64>,
    rtg_schedule: Option<f64>,
) -> Result<Vec<EvalReport>> {
    checkpoint.config.validate()?;
    if checkpoint.mode == TrainMode::DtBaseline && rtg_schedule.is_none() {
        return Err(Error::Config(
            "dt_baseline evaluation needs an initial RTG; pass a schedule or sweep".into(),
        ));
    }
    evaluate_with(
        || match rtg_schedule {
            Some(initial) => ModelPolicy::with_rtg_schedule(checkpoint, initial),
            None => ModelPolicy::greedy(checkpoint),
        },
        env,
        roster,
        variants,
        episodes_per_advertiser,
        eval_seed,
        forbidden,
    )
}

/// Initial-RTG grid for classic-layout evaluation, as fractions of the
/// checkpoint's RTG scale.
pub const DT_RTG_FRACTIONS: [f64; 5] = [0.5, 0.7, 0.9, 0.99, 1.2];

/// One evaluated initial-RTG setting of a classic-layout model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fraction: f64,
    pub initial_rtg: f64,
    pub reports: Vec<EvalReport>,
}

/// Evaluate a classic-layout checkpoint over [`DT_RTG_FRACTIONS`], reusing
/// the same episode seeds for every point so the sweep is a fair race.
pub fn dt_baseline_sweep(
    checkpoint: &Checkpoint,
    env: &OpportunityModel,
    roster: &Roster,
    variants: &[Variant],
    episodes_per_advertiser: usize,
    eval_seed: u64,
    forbidden: &HashSet<u64>,
) -> Result<Vec<SweepPoint>> {
    DT_RTG_FRACTIONS
        .iter()
        .map(|&fraction| {
            let initial_rtg = fraction * f64::from(checkpoint.rtg_scale);
            let reports = evaluate_policy(
                checkpoint,
                env,
                roster,
                variants,
                episodes_per_advertiser,
                eval_seed,
                forbidden,
                Some(initial_rtg),
            )?;
            Ok(SweepPoint {
                fraction,
                initial_rtg,
                reports,
            })
        })
        .collect()
}

/// The sweep point with the best mean score on `variant`.
pub fn best_sweep_point(points: &[SweepPoint], variant: Variant) -> Option<&SweepPoint> {
    points
        .iter()
        .filter_map(|p| {
            p.reports
                .iter()
                .find(|r| r.variant == variant)
                .map(|r| (p, r.mean_score))
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(p, _)| p)
}

/// Evaluation of one constant bid coefficient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantEval {
    pub coefficient: f64,
    pub reports: Vec<EvalReport>,
}

/// Evaluate a grid of constant coefficients as a reference line.
pub fn constant_sweep(
    env: &OpportunityModel,
    roster: &Roster,
    grid: &[f64],
    variants: &[Variant],
    episodes_per_advertiser: usize,
    eval_seed: u64,
    forbidden: &HashSet<u64>,
) -> Result<Vec<ConstantEval>> {
    grid.iter()
        .map(|&coefficient| {
            let reports = evaluate_with(
                || Ok(ConstantPolicy(coefficient)),
                env,
                roster,
                variants,
                episodes_per_advertiser,
                eval_seed,
                forbidden,
            )?;
            Ok(ConstantEval {
                coefficient,
                reports,
            })
        })
        .collect()
}
