//! Causal sequence model over interleaved (state, RTG, action) tokens.
//!
//! Under the (s, R, a) order the network learns two conditional maps at
//! once: RTG from the state token and action from the RTG token. Trained
//! with MSE the RTG head memorizes dataset returns; trained with the
//! quantile loss at small lambda it estimates the best return the dataset
//! supports from a state, which at inference makes the action head imitate
//! the best-performing trajectories rather than the average.

mod check;
mod checkpoint;
mod config;
mod loss;
mod net;

pub use check::model_grad_check;
pub use checkpoint::Checkpoint;
pub use config::{ModelConfig, TokenOrder, TrainMode};
pub use loss::{quantile_loss, training_loss, LossBreakdown};
pub use net::{forward, LayerParams, ModelOutput, Params, TokenBatch};
