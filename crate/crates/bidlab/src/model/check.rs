//! Finite-difference check of the whole model + loss against the tape.

use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, TrainMode};
use crate::model::loss::training_loss;
use crate::model::net::{forward, Params, TokenBatch};
use crate::num::{grad_check, GradCheckReport, Tape, Tensor};

/// Fresh parameter struct carrying the given values (canonical order).
fn params_from_values(config: &ModelConfig, values: &[Tensor]) -> Result<Params> {
    let mut p = Params::init(config, 0)?;
    let mut slots = p.named_mut();
    if slots.len() != values.len() {
        return Err(Error::Contract(format!(
            "model has {} parameters, got {} value tensors",
            slots.len(),
            values.len()
        )));
    }
    for ((_, slot), v) in slots.iter_mut().zip(values) {
        **slot = v.clone().requires_grad(true);
    }
    Ok(p)
}

/// Check every parameter's reverse-mode gradient of the mode's training
/// loss on `batch` against central finite differences.
pub fn model_grad_check(
    config: &ModelConfig,
    mode: TrainMode,
    batch: &TokenBatch,
    init_seed: u64,
    epsilon: f32,
) -> Result<GradCheckReport> {
    let proto = Params::init(config, init_seed)?;
    let named: Vec<(String, Tensor)> = proto
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();

    let eval = |values: &[Tensor]| -> Result<f32> {
        let mut p = params_from_values(config, values)?;
        let mut tape = Tape::new();
        let out = forward(&mut tape, config, &mut p, batch, mode.token_order(), None)?;
        let (root, _) = training_loss(&mut tape, mode, &out, batch, config.lambda)?;
        Ok(tape.values(root)[0])
    };

    let base: Vec<Tensor> = named.iter().map(|(_, t)| t.clone()).collect();
    let analytic: Vec<Vec<f32>> = {
        let mut p = params_from_values(config, &base)?;
        let mut tape = Tape::new();
        let out = forward(&mut tape, config, &mut p, batch, mode.token_order(), None)?;
        let (root, _) = training_loss(&mut tape, mode, &out, batch, config.lambda)?;
        tape.backward(root)?;
        let mut grads = Vec::with_capacity(named.len());
        for (_, t) in p.named_mut() {
            t.pull_grad(&tape)?;
            grads.push(t.grad().expect("pulled").to_vec());
        }
        grads
    };

    let refs: Vec<(&str, Tensor)> = named.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
    grad_check(&refs, &analytic, epsilon, eval)
}
