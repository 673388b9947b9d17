//! Stochastic budget-constrained auction environment.
//!
//! Each episode is a fixed number of decision steps. A policy emits one bid
//! coefficient per step; the environment samples a Poisson number of
//! opportunities, bids `coefficient * pcvr * target_cpa` on each, resolves
//! wins against a log-normal opponent price, then samples exposure and
//! conversion. Spend is first-price on exposure and the budget can never go
//! negative: a bid larger than the remaining budget is skipped outright.
//!
//! Every opportunity consumes exactly four random draws whether or not the
//! bid wins, so sweeps over coefficients with a shared seed face identical
//! market conditions.

mod engine;
mod env;

pub use engine::{
    compute_rtg, run_episode, run_step, AuctionEvent, BidPolicy, ConstantPolicy, Episode,
    SimState, StepAggregate, StepOutcome,
};
pub use env::{
    AdvertiserConfig, BucketKey, EnvParams, LogNormalParams, OpportunityModel, PcvrDist, Roster,
};

/// Upper bound of the bid-coefficient action space.
pub const A_MAX: f64 = 4.0;
