//! Desk-scale auto-bidding laboratory.
//!
//! The crate trains a causal sequence model over interleaved
//! (state, return-to-go, action) tokens of bidding episodes, estimates the
//! in-dataset upper bound of the return-to-go with a quantile loss, and grows
//! its own training set by rolling the learned policy through a stochastic
//! budget-constrained auction simulator and keeping the high-return episodes.
//!
//! Module map:
//! - [`num`] — dense tensors, tape-based reverse-mode autodiff, Adam, gradient checking
//! - [`model`] — the sequence model, its losses, and checkpoint files
//! - [`sim`] — the auction environment (opportunities, wins, exposures, conversions)
//! - [`data`] — trajectory datasets: featurization, generation, selection, persistence
//! - [`pipeline`] — training runs, policy rollouts, and the iterate loop
//! - [`eval`] — score/penalty metrics, policy evaluation, report rendering

pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod model;
pub mod num;
pub mod pipeline;
pub mod seeding;
pub mod sim;

pub use error::{Error, Result};
