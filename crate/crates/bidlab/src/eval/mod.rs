//! Scoring, seeded evaluation, and report rendering.

mod evaluate;
mod metrics;
mod report;

pub use evaluate::{
    best_sweep_point, constant_sweep, dt_baseline_sweep, evaluate_policy, evaluate_with,
    training_seeds, ConstantEval, EpisodeRecord, EvalReport, SweepPoint, Variant,
    DT_RTG_FRACTIONS,
};
pub use metrics::{penalty, score_episode, EpisodeScore};
pub use report::{quantile_series_csv, render_comparison, MethodEval};
