//! State featurization shared by dataset construction and live policies.

use crate::data::types::{Provenance, Step, Trajectory};
use crate::error::{Error, Result};
use crate::sim::{compute_rtg, AdvertiserConfig, Episode, SimState, StepAggregate};

/// Width of the state vector.
pub const STATE_DIM: usize = 6;

/// Trailing steps feeding the win-rate and price features.
const RECENT_WINDOW: usize = 3;

/// Cap on the CPA-pressure feature.
const CPA_RATIO_CAP: f64 = 5.0;

/// The feature formulas on raw counters; `featurize` and the import path
/// both end up here.
pub(crate) fn features_from_counters(
    t: f64,
    t_max: f64,
    budget: f64,
    c_t: f64,
    cum_cost: f64,
    remaining: f64,
    conversions: f64,
    win_rate: f64,
    mean_price: f64,
) -> [f32; STATE_DIM] {
    let time_frac = t / t_max;
    let budget_frac = remaining / budget;
    let spend_rate = cum_cost / (budget * t.max(1.0) / t_max);
    let cpa_ratio = if conversions == 0.0 {
        0.0
    } else {
        (cum_cost / conversions / c_t).min(CPA_RATIO_CAP)
    };
    [
        time_frac as f32,
        budget_frac as f32,
        spend_rate as f32,
        cpa_ratio as f32,
        win_rate as f32,
        (mean_price / c_t) as f32,
    ]
}

/// Six features describing the situation before an action:
/// elapsed-time fraction, remaining-budget fraction, spend rate relative to
/// the linear schedule, realized CPA over the target (capped, 0 before the
/// first conversion), win rate over the recent window, and recent mean
/// opponent price over the CPA target.
pub fn featurize(
    state: &SimState,
    history: &[StepAggregate],
    adv: &AdvertiserConfig,
) -> [f32; STATE_DIM] {
    let recent = &history[history.len().saturating_sub(RECENT_WINDOW)..];
    let opportunities: u64 = recent.iter().map(|a| a.opportunities).sum();
    let wins: u64 = recent.iter().map(|a| a.wins).sum();
    let (win_rate, mean_price) = if opportunities == 0 {
        (0.0, 0.0)
    } else {
        let price_sum: f64 = recent
            .iter()
            .map(|a| a.mean_opponent_price * a.opportunities as f64)
            .sum();
        (
            wins as f64 / opportunities as f64,
            price_sum / opportunities as f64,
        )
    };
    features_from_counters(
        state.t as f64,
        adv.episode_steps as f64,
        adv.budget,
        adv.effective_cpa(),
        state.cum_cost,
        state.remaining_budget,
        state.cum_conversions as f64,
        win_rate,
        mean_price,
    )
}

/// Turn a simulated episode into a stored trajectory with featurized
/// states and return-to-go labels.
pub fn trajectory_from_episode(
    episode: &Episode,
    seed: u64,
    provenance: Provenance,
) -> Result<Trajectory> {
    let t_max = episode.adv.episode_steps;
    if episode.pre_states.len() != t_max
        || episode.actions.len() != t_max
        || episode.rewards.len() != t_max
        || episode.aggregates.len() != t_max
    {
        return Err(Error::Contract(format!(
            "episode for {} is not {} full steps",
            episode.adv.name, t_max
        )));
    }
    let rtg = compute_rtg(&episode.rewards)?;
    let steps: Vec<Step> = (0..t_max)
        .map(|t| Step {
            state: featurize(&episode.pre_states[t], &episode.aggregates[..t], &episode.adv),
            action: episode.actions[t] as f32,
            reward: episode.rewards[t] as f32,
            rtg: rtg[t] as f32,
        })
        .collect();
    let trajectory = Trajectory {
        adv: episode.adv.clone(),
        seed,
        provenance,
        episode_return: rtg[0] as f32,
        steps,
    };
    trajectory.validate()?;
    Ok(trajectory)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_adv() -> AdvertiserConfig {
        AdvertiserConfig {
            name: "t".into(),
            budget: 70.0,
            target_cpa: 3.0,
            episode_steps: 48,
            cpa_multiplier: 1.0,
        }
    }

    fn close(got: f32, want: f64) -> bool {
        (f64::from(got) - want).abs() < 1e-6
    }

    #[test]
    fn features_match_hand_computation() {
        // t=12 of 48, spent 17.5 of 70 (exactly on schedule), 5 conversions.
        let f = features_from_counters(12.0, 48.0, 70.0, 3.0, 17.5, 52.5, 5.0, 0.3, 0.335);
        assert!(close(f[0], 0.25), "{f:?}");
        assert!(close(f[1], 0.75), "{f:?}");
        assert!(close(f[2], 1.0), "{f:?}");
        assert!(close(f[3], 3.5 / 3.0), "{f:?}");
        assert!(close(f[4], 0.3), "{f:?}");
        assert!(close(f[5], 0.335 / 3.0), "{f:?}");
    }

    #[test]
    fn cpa_feature_caps_and_handles_zero_conversions() {
        let none = features_from_counters(1.0, 48.0, 70.0, 3.0, 5.0, 65.0, 0.0, 0.0, 0.0);
        assert_eq!(none[3], 0.0);
        let wild = features_from_counters(1.0, 48.0, 70.0, 3.0, 60.0, 10.0, 1.0, 0.0, 0.0);
        assert_eq!(wild[3], CPA_RATIO_CAP as f32);
    }

    #[test]
    fn step_zero_features_are_fixed() {
        let state = SimState::initial(&test_adv());
        assert_eq!(
            featurize(&state, &[], &test_adv()),
            [0.0, 1.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn recent_window_uses_last_three_steps() {
        let adv = test_adv();
        let mk = |opportunities: u64, wins: u64, mean_opponent_price: f64| StepAggregate {
            opportunities,
            wins,
            exposures: wins,
            conversions: 0,
            cost: 0.0,
            mean_opponent_price,
        };
        let state = SimState {
            t: 4,
            remaining_budget: 70.0,
            cum_cost: 0.0,
            cum_conversions: 0,
            cum_wins: 12,
            cum_opportunities: 140,
        };
        // The first aggregate is poisoned; only the last three may count.
        let history = [mk(100, 0, 9.0), mk(10, 4, 0.2), mk(20, 6, 0.5), mk(10, 2, 0.14)];
        let f = featurize(&state, &history, &adv);
        assert!(close(f[4], 12.0 / 40.0), "{f:?}");
        assert!(close(f[5], (2.0 + 10.0 + 1.4) / 40.0 / 3.0), "{f:?}");

        let short = featurize(&state, &history[1..2], &adv);
        assert!(close(short[4], 0.4), "{short:?}");
        assert!(close(short[5], 0.2 / 3.0), "{short:?}");

        let empty = featurize(&state, &[], &adv);
        assert_eq!(empty[4], 0.0);
        assert_eq!(empty[5], 0.0);
    }

    #[test]
    fn episodes_with_a_missing_step_are_rejected() {
        use crate::sim::{run_episode, ConstantPolicy, OpportunityModel};
        use rand_chacha::rand_core::SeedableRng;
        let env = OpportunityModel::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut episode =
            run_episode(&mut ConstantPolicy(0.8), &env, &test_adv(), &mut rng).unwrap();
        episode.rewards.pop();
        let err = trajectory_from_episode(&episode, 5, Provenance::Generated { iter: 1 })
            .unwrap_err();
        assert!(err.to_string().contains("full steps"), "{err}");
    }
}
