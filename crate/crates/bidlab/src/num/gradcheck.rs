//! Finite-difference verification of reverse-mode gradients.
//!
//! The core entry point compares caller-supplied analytic gradients against
//! central differences of a value function; [`grad_check_tape`] is a
//! convenience for functions built directly from tape ops.

use crate::error::{Error, Result};
use crate::num::tape::{Tape, TensorRef};
use crate::num::tensor::Tensor;

/// Worst-case comparison for one named parameter.
#[derive(Debug, Clone)]
pub struct ParamError {
    pub name: String,
    pub max_rel_err: f32,
    pub worst_index: usize,
    pub analytic_at_worst: f32,
    pub numeric_at_worst: f32,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamError>,
    pub max_rel_err: f32,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f32) -> bool {
        self.max_rel_err <= tol
    }

    /// Parameters whose worst error exceeds `tol`.
    pub fn failures(&self, tol: f32) -> Vec<&ParamError> {
        self.params
            .iter()
            .filter(|p| p.max_rel_err > tol)
            .collect()
    }
}

/// Compare `analytic` (one gradient buffer per parameter, caller-computed)
/// against central finite differences of `value_fn` with step `epsilon`.
///
/// `value_fn` is called on perturbed copies of the parameter values and
/// must be deterministic; two baseline evaluations guard against hidden
/// randomness. Relative error uses the floor `max(1, |numeric|)` so
/// near-zero gradients are compared absolutely.
pub fn grad_check<V>(
    params: &[(&str, Tensor)],
    analytic: &[Vec<f32>],
    epsilon: f32,
    value_fn: V,
) -> Result<GradCheckReport>
where
    V: Fn(&[Tensor]) -> Result<f32>,
{
    if analytic.len() != params.len() {
        return Err(Error::Contract(format!(
            "grad_check got {} analytic buffers for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    for ((name, t), a) in params.iter().zip(analytic) {
        if a.len() != t.numel() {
            return Err(Error::Contract(format!(
                "analytic gradient for {name} has {} values, parameter has {}",
                a.len(),
                t.numel()
            )));
        }
    }

    let mut values: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let base = value_fn(&values)?;
    let again = value_fn(&values)?;
    if base != again {
        return Err(Error::Determinism(format!(
            "function is not deterministic: {base} vs {again} on identical inputs"
        )));
    }
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("grad_check target is {base}")));
    }

    let mut report = GradCheckReport {
        params: Vec::with_capacity(params.len()),
        max_rel_err: 0.0,
    };
    for (pi, (name, _)) in params.iter().enumerate() {
        let mut worst = ParamError {
            name: (*name).to_string(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
        };
        for j in 0..values[pi].numel() {
            let orig = values[pi].values()[j];
            values[pi].values_mut()[j] = orig + epsilon;
            let plus = value_fn(&values)?;
            values[pi].values_mut()[j] = orig - epsilon;
            let minus = value_fn(&values)?;
            values[pi].values_mut()[j] = orig;

            let numeric =
                ((f64::from(plus) - f64::from(minus)) / (2.0 * f64::from(epsilon))) as f32;
            let a = analytic[pi][j];
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            if rel >= worst.max_rel_err {
                worst = ParamError {
                    name: (*name).to_string(),
                    max_rel_err: rel,
                    worst_index: j,
                    analytic_at_worst: a,
                    numeric_at_worst: numeric,
                };
            }
        }
        report.max_rel_err = report.max_rel_err.max(worst.max_rel_err);
        report.params.push(worst);
    }
    Ok(report)
}

/// [`grad_check`] for a scalar function assembled from tape ops; the
/// analytic side comes from one reverse sweep over `build`'s graph.
pub fn grad_check_tape<F>(
    params: &[(&str, Tensor)],
    epsilon: f32,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[TensorRef]) -> Result<TensorRef>,
{
    let run = |values: &[Tensor], want_grads: bool| -> Result<(f32, Vec<Vec<f32>>)> {
        let mut tape = Tape::new();
        let refs: Vec<TensorRef> = values
            .iter()
            .map(|t| {
                let mut t = t.clone().requires_grad(true);
                tape.insert(&mut t)
            })
            .collect();
        let root = build(&mut tape, &refs)?;
        if tape.dims(root) != [1] {
            return Err(Error::Contract(format!(
                "grad_check target must be a scalar, got shape {:?}",
                tape.dims(root)
            )));
        }
        let value = tape.values(root)[0];
        if !want_grads {
            return Ok((value, Vec::new()));
        }
        tape.backward(root)?;
        let grads = refs
            .iter()
            .zip(values)
            .map(|(&r, t)| {
                tape.grad(r)
                    .map(<[f32]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; t.numel()])
            })
            .collect();
        Ok((value, grads))
    };

    let base: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let (_, analytic) = run(&base, true)?;
    grad_check(params, &analytic, epsilon, |values| {
        run(values, false).map(|(v, _)| v)
    })
}
