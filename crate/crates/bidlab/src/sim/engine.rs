//! Auction mechanics: per-step opportunity resolution and episode rollout.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::sim::env::{AdvertiserConfig, OpportunityModel};

/// One opportunity's full outcome, kept for metric recomputation.
#[derive(Debug, Clone, PartialEq)]
pub struct AuctionEvent {
    pub bid: f64,
    pub opponent_price: f64,
    pub won: bool,
    pub exposed: bool,
    pub converted: bool,
    pub cost: f64,
    pub pcvr: f64,
}

/// Advertiser-side counters over an episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimState {
    pub t: usize,
    pub remaining_budget: f64,
    pub cum_cost: f64,
    pub cum_conversions: u64,
    pub cum_wins: u64,
    pub cum_opportunities: u64,
}

impl SimState {
    pub fn initial(adv: &AdvertiserConfig) -> Self {
        SimState {
            t: 0,
            remaining_budget: adv.budget,
            cum_cost: 0.0,
            cum_conversions: 0,
            cum_wins: 0,
            cum_opportunities: 0,
        }
    }
}

/// Per-step market summary, the raw material for state featurization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepAggregate {
    pub opportunities: u64,
    pub wins: u64,
    pub exposures: u64,
    pub conversions: u64,
    pub cost: f64,
    /// Mean opponent price over the step's opportunities; 0 when none arrived.
    pub mean_opponent_price: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub events: Vec<AuctionEvent>,
    /// Conversions this step.
    pub reward: f64,
    pub aggregate: StepAggregate,
}

/// Resolve one decision step: sample opportunities, bid, pay, convert.
///
/// A bid above the remaining budget is skipped (recorded as a forced loss)
/// so the budget never goes negative and the episode keeps its length.
pub fn run_step(
    state: &mut SimState,
    coefficient: f64,
    env: &OpportunityModel,
    adv: &AdvertiserConfig,
    rng: &mut impl Rng,
) -> Result<StepOutcome> {
    if state.t >= adv.episode_steps {
        return Err(Error::EpisodeOver {
            t: state.t,
            limit: adv.episode_steps,
        });
    }
    if !coefficient.is_finite() || coefficient < 0.0 {
        return Err(Error::Contract(format!(
            "bid coefficient must be finite and non-negative, got {coefficient}"
        )));
    }

    let poisson = Poisson::new(env.opportunities_per_step)
        .map_err(|e| Error::Config(format!("opportunities_per_step: {e}")))?;
    let price_dist = env.price_dist();
    let c_t = adv.effective_cpa();

    let n = poisson.sample(rng) as u64;
    let mut events = Vec::with_capacity(n as usize);
    let mut agg = StepAggregate {
        opportunities: n,
        wins: 0,
        exposures: 0,
        conversions: 0,
        cost: 0.0,
        mean_opponent_price: 0.0,
    };
    let mut price_sum = 0.0f64;
    for _ in 0..n {
        // Four draws per opportunity, unconditionally, so runs that differ
        // only in bids still see the same market.
        let pcvr = env.pcvr_dist.sample(rng);
        let opponent_price = price_dist.sample(rng);
        let u_expo: f64 = rng.random();
        let u_conv: f64 = rng.random();

        let bid = coefficient * pcvr * c_t;
        let affordable = bid <= state.remaining_budget;
        let won = affordable && bid > opponent_price;
        let exposed = won && u_expo < env.p_exposure;
        let converted = exposed && u_conv < pcvr;
        let cost = if exposed { bid } else { 0.0 };

        state.remaining_budget -= cost;
        state.cum_cost += cost;
        agg.wins += u64::from(won);
        agg.exposures += u64::from(exposed);
        agg.conversions += u64::from(converted);
        agg.cost += cost;
        price_sum += opponent_price;

        events.push(AuctionEvent {
            bid,
            opponent_price,
            won,
            exposed,
            converted,
            cost,
            pcvr,
        });
    }
    if n > 0 {
        agg.mean_opponent_price = price_sum / n as f64;
    }

    state.t += 1;
    state.cum_conversions += agg.conversions;
    state.cum_wins += agg.wins;
    state.cum_opportunities += n;

    Ok(StepOutcome {
        events,
        reward: agg.conversions as f64,
        aggregate: agg,
    })
}

/// A per-step bid coefficient source.
pub trait BidPolicy {
    /// Reset any internal state before a fresh episode.
    fn begin_episode(&mut self) {}

    fn act(
        &mut self,
        state: &SimState,
        history: &[StepAggregate],
        adv: &AdvertiserConfig,
    ) -> Result<f64>;
}

impl<P: BidPolicy + ?Sized> BidPolicy for Box<P> {
    fn begin_episode(&mut self) {
        (**self).begin_episode();
    }

    fn act(
        &mut self,
        state: &SimState,
        history: &[StepAggregate],
        adv: &AdvertiserConfig,
    ) -> Result<f64> {
        (**self).act(state, history, adv)
    }
}

/// Bids the same coefficient every step.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub f64);

impl BidPolicy for ConstantPolicy {
    fn act(&mut self, _: &SimState, _: &[StepAggregate], _: &AdvertiserConfig) -> Result<f64> {
        Ok(self.0)
    }
}

/// Everything one rollout produced.
#[derive(Debug, Clone)]
pub struct Episode {
    pub adv: AdvertiserConfig,
    /// Counters as each action saw them, one snapshot per step.
    pub pre_states: Vec<SimState>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub aggregates: Vec<StepAggregate>,
    pub events: Vec<Vec<AuctionEvent>>,
    pub final_state: SimState,
}

impl Episode {
    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn all_events(&self) -> impl Iterator<Item = &AuctionEvent> {
        self.events.iter().flatten()
    }
}

/// Roll a policy through a full fixed-length episode.
pub fn run_episode(
    policy: &mut dyn BidPolicy,
    env: &OpportunityModel,
    adv: &AdvertiserConfig,
    rng: &mut impl Rng,
) -> Result<Episode> {
    env.validate()?;
    adv.validate()?;
    let t_max = adv.episode_steps;
    let mut state = SimState::initial(adv);
    let mut pre_states = Vec::with_capacity(t_max);
    let mut actions = Vec::with_capacity(t_max);
    let mut rewards = Vec::with_capacity(t_max);
    let mut aggregates: Vec<StepAggregate> = Vec::with_capacity(t_max);
    let mut events = Vec::with_capacity(t_max);

    policy.begin_episode();
    for _ in 0..t_max {
        pre_states.push(state);
        let coefficient = policy.act(&state, &aggregates, adv)?;
        let outcome = run_step(&mut state, coefficient, env, adv, rng)?;
        actions.push(coefficient);
        rewards.push(outcome.reward);
        aggregates.push(outcome.aggregate);
        events.push(outcome.events);
    }

    Ok(Episode {
        adv: adv.clone(),
        pre_states,
        actions,
        rewards,
        aggregates,
        events,
        final_state: state,
    })
}

/// Suffix sums of rewards: `rtg[t] = rewards[t] + ... + rewards[T-1]`.
pub fn compute_rtg(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::Contract(
            "compute_rtg needs at least one reward".into(),
        ));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0f64;
    for (slot, &r) in out.iter_mut().zip(rewards).rev() {
        acc += r;
        *slot = acc;
    }
    Ok(out)
}
