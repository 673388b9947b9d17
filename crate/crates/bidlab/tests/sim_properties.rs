//! Invariant fuzzing for the auction engine: many random policies, varied
//! budgets, every event audited.

use bidlab::seeding::rng_for;
use bidlab::sim::{
    compute_rtg, run_episode, AdvertiserConfig, BidPolicy, OpportunityModel, SimState,
    StepAggregate, A_MAX,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Draws a fresh coefficient in [0, A_MAX] every step.
struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl BidPolicy for RandomPolicy {
    fn act(
        &mut self,
        _: &SimState,
        _: &[StepAggregate],
        _: &AdvertiserConfig,
    ) -> bidlab::Result<f64> {
        Ok(self.rng.random_range(0.0..A_MAX))
    }
}

#[test]
fn fuzzed_policies_never_violate_budget_or_event_chain() {
    let env = OpportunityModel::default();
    // Budgets from starved to slack so the skip rule is exercised.
    let budgets = [0.5, 5.0, 40.0, 1e5];
    let mut audited_events = 0usize;

    for case in 0..1000u64 {
        let adv = AdvertiserConfig {
            name: format!("fuzz-{case}"),
            budget: budgets[case as usize % budgets.len()],
            target_cpa: 3.0,
            episode_steps: 48,
            cpa_multiplier: 1.0,
        };
        let mut policy = RandomPolicy {
            rng: rng_for(21, "fuzz-policy", &[case]),
        };
        let mut env_rng = rng_for(21, "fuzz-env", &[case]);
        let ep = run_episode(&mut policy, &env, &adv, &mut env_rng).unwrap();

        // Budget non-negativity after every event, via cost prefix sums.
        let mut spent = 0.0f64;
        for e in ep.all_events() {
            spent += e.cost;
            assert!(
                spent <= adv.budget,
                "case {case}: cumulative cost {spent} exceeds budget {}",
                adv.budget
            );
            assert!(e.exposed <= e.won, "case {case}: exposure without win");
            assert!(e.converted <= e.exposed, "case {case}: conversion without exposure");
            let expected_cost = if e.won && e.exposed { e.bid } else { 0.0 };
            assert_eq!(e.cost, expected_cost, "case {case}: cost convention broken");
            assert!(e.cost <= e.bid);
            audited_events += 1;
        }
        assert!(ep.final_state.remaining_budget >= 0.0);
        // Incremental decrements and the cost sum round differently; they
        // agree to fp noise while non-negativity stays exact.
        let drift = (ep.final_state.remaining_budget - (adv.budget - ep.final_state.cum_cost)).abs();
        assert!(drift <= 1e-9 * adv.budget.max(1.0), "case {case}: drift {drift}");

        // Realized-CPA bookkeeping: counters equal the event-log sums.
        let spend: f64 = ep.all_events().map(|e| e.cost).sum();
        let conversions: u64 = ep.all_events().map(|e| u64::from(e.converted)).sum();
        assert_eq!(ep.final_state.cum_cost, spent);
        assert_eq!(spend, spent);
        assert_eq!(ep.final_state.cum_conversions, conversions);

        // RTG is non-increasing for non-negative rewards.
        let rtg = compute_rtg(&ep.rewards).unwrap();
        assert!(rtg.windows(2).all(|w| w[0] >= w[1]), "case {case}: rtg increased");
        assert_eq!(rtg[0], ep.episode_return());
    }
    assert!(audited_events > 100_000, "fuzz saw only {audited_events} events");
}
