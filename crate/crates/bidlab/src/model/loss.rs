//! Training objectives: masked MSE, the asymmetric quantile loss, and the
//! per-mode combination.

use crate::error::{Error, Result};
use crate::model::config::TrainMode;
use crate::model::net::{ModelOutput, TokenBatch};
use crate::num::{Tape, TensorRef};

/// Loss terms as plain numbers, for curves and logs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f32,
    pub rtg_term: f32,
    pub action_term: f32,
}

/// Mean of `values` over positions where `mask` is 1.
///
/// The division uses the real-position count, so padded positions neither
/// contribute loss nor dilute it.
fn masked_mean(
    tape: &mut Tape,
    values: TensorRef,
    mask: TensorRef,
    real_count: usize,
) -> Result<TensorRef> {
    let masked = tape.mul(values, mask)?;
    let total = tape.sum(masked);
    Ok(tape.mul_scalar(total, 1.0 / real_count as f32))
}

fn masked_mse(
    tape: &mut Tape,
    pred: TensorRef,
    target: TensorRef,
    mask: TensorRef,
    real_count: usize,
) -> Result<TensorRef> {
    let neg_target = tape.mul_scalar(target, -1.0);
    let diff = tape.add(pred, neg_target)?;
    let sq = tape.mul(diff, diff)?;
    masked_mean(tape, sq, mask, real_count)
}

/// Asymmetric piecewise-linear penalty
/// `(1-lambda) * relu(target - pred) + lambda * relu(pred - target)`,
/// averaged over real positions. Its minimizing constant is the
/// (1-lambda) empirical quantile of the targets.
pub fn quantile_loss(
    tape: &mut Tape,
    lambda: f32,
    rtg_pred: TensorRef,
    rtg_target: TensorRef,
    mask: TensorRef,
    real_count: usize,
) -> Result<TensorRef> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Config(format!(
            "lambda must lie strictly inside (0,1), got {lambda}"
        )));
    }
    let neg_pred = tape.mul_scalar(rtg_pred, -1.0);
    let under = tape.add(rtg_target, neg_pred)?; // target - pred
    let under_relu = tape.relu(under);
    let over = tape.mul_scalar(under, -1.0); // pred - target
    let over_relu = tape.relu(over);
    let under_term = tape.mul_scalar(under_relu, 1.0 - lambda);
    let over_term = tape.mul_scalar(over_relu, lambda);
    let combined = tape.add(under_term, over_term)?;
    masked_mean(tape, combined, mask, real_count)
}

/// Mode-specific total loss over a batch.
///
/// `rdt` regresses both heads with MSE; `rhat` swaps the RTG term for the
/// quantile loss; `bc` and `dt_baseline` fit actions only.
pub fn training_loss(
    tape: &mut Tape,
    mode: TrainMode,
    output: &ModelOutput,
    batch: &TokenBatch,
    lambda: f32,
) -> Result<(TensorRef, LossBreakdown)> {
    let b = batch.batch;
    let k = batch.steps;
    let real_count = batch.real_count();
    if real_count == 0 {
        return Err(Error::Contract("batch has no real positions".into()));
    }
    let mask = tape.constant(&[b, k, 1], batch.mask_values())?;
    let rtg_target = tape.constant(&[b, k, 1], batch.rtgs.clone())?;
    let action_target = tape.constant(&[b, k, 1], batch.actions.clone())?;

    let action_term = masked_mse(tape, output.action_pred, action_target, mask, real_count)?;
    let rtg_term = match mode {
        TrainMode::Rdt => Some(masked_mse(
            tape,
            output.rtg_pred,
            rtg_target,
            mask,
            real_count,
        )?),
        TrainMode::Rhat => Some(quantile_loss(
            tape,
            lambda,
            output.rtg_pred,
            rtg_target,
            mask,
            real_count,
        )?),
        TrainMode::Bc | TrainMode::DtBaseline => None,
    };

    let (total, rtg_value) = match rtg_term {
        Some(rt) => (tape.add(rt, action_term)?, tape.values(rt)[0]),
        None => (action_term, 0.0),
    };
    let breakdown = LossBreakdown {
        total: tape.values(total)[0],
        rtg_term: rtg_value,
        action_term: tape.values(action_term)[0],
    };
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "training loss is {}",
            breakdown.total
        )));
    }
    Ok((total, breakdown))
}
