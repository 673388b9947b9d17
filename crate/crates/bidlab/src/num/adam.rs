//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::tensor::Tensor;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Decoupled weight decay, applied directly to the weights and not to
    /// the moment estimates.
    pub weight_decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

struct Slot {
    name: String,
    m: Vec<f32>,
    v: Vec<f32>,
}

/// Optimizer state; moment buffers are keyed by parameter order, which must
/// stay identical across steps.
pub struct AdamState {
    config: AdamConfig,
    step_count: u64,
    slots: Vec<Slot>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step_count: 0,
            slots: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn lr(&self) -> f32 {
        self.config.lr
    }

    /// Override the learning rate for subsequent steps (for schedules).
    pub fn set_lr(&mut self, lr: f32) {
        self.config.lr = lr;
    }

    /// Apply one update to every parameter and clear its gradient.
    ///
    /// Every parameter must carry a gradient; a missing one is a contract
    /// error naming the parameter rather than a silent no-op.
    pub fn step(&mut self, params: &mut [(&str, &mut Tensor)]) -> Result<()> {
        if self.slots.is_empty() {
            self.slots = params
                .iter()
                .map(|(name, t)| Slot {
                    name: (*name).to_string(),
                    m: vec![0.0; t.numel()],
                    v: vec![0.0; t.numel()],
                })
                .collect();
        }
        if self.slots.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer was built for {} parameters, got {}",
                self.slots.len(),
                params.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let b1 = f64::from(self.config.beta1);
        let b2 = f64::from(self.config.beta2);
        let bc1 = (1.0 - b1.powf(t)) as f32;
        let bc2 = (1.0 - b2.powf(t)) as f32;
        let lr = self.config.lr;
        let eps = self.config.eps;
        let wd = self.config.weight_decay;

        for (slot, (name, param)) in self.slots.iter_mut().zip(params.iter_mut()) {
            if slot.name != *name || slot.m.len() != param.numel() {
                return Err(Error::Contract(format!(
                    "optimizer slot {} ({} values) does not match parameter {} ({} values)",
                    slot.name,
                    slot.m.len(),
                    name,
                    param.numel()
                )));
            }
            let grad = param.grad().ok_or_else(|| {
                Error::Contract(format!("parameter {name} has no gradient at optimizer step"))
            })?;
            let grad = grad.to_vec();
            for (((w, g), m), v) in param
                .values_mut()
                .iter_mut()
                .zip(&grad)
                .zip(slot.m.iter_mut())
                .zip(slot.v.iter_mut())
            {
                *m = self.config.beta1 * *m + (1.0 - self.config.beta1) * g;
                *v = self.config.beta2 * *v + (1.0 - self.config.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w -= lr * (mhat / (vhat.sqrt() + eps) + wd * *w);
            }
            param.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converges_on_quadratic() {
        // min (w - 3)^2 from w = 0; gradient is 2(w - 3).
        let mut w = Tensor::scalar(0.0).requires_grad(true);
        let mut adam = AdamState::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        for _ in 0..400 {
            let g = 2.0 * (w.item() - 3.0);
            w.set_grad(Some(vec![g]));
            adam.step(&mut [("w", &mut w)]).unwrap();
        }
        assert!((w.item() - 3.0).abs() < 1e-3, "w = {}", w.item());
        assert_eq!(adam.step_count(), 400);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the very first update has magnitude ~lr.
        let mut w = Tensor::scalar(1.0).requires_grad(true);
        let mut adam = AdamState::new(AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        });
        w.set_grad(Some(vec![7.5]));
        adam.step(&mut [("w", &mut w)]).unwrap();
        assert!((w.item() - (1.0 - 0.01)).abs() < 1e-5, "w = {}", w.item());
    }

    #[test]
    fn zero_gradient_without_decay_leaves_params_unchanged() {
        let mut w = Tensor::from_values(&[3], vec![1.0, -2.0, 0.5])
            .unwrap()
            .requires_grad(true);
        let mut adam = AdamState::new(AdamConfig::default());
        w.set_grad(Some(vec![0.0; 3]));
        adam.step(&mut [("w", &mut w)]).unwrap();
        assert_eq!(w.values(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut w = Tensor::scalar(0.0).requires_grad(true);
        let mut adam = AdamState::new(AdamConfig::default());
        let err = adam.step(&mut [("w", &mut w)]).unwrap_err();
        assert!(err.to_string().contains("w"), "{err}");
    }

    #[test]
    fn gradient_cleared_after_step() {
        let mut w = Tensor::scalar(0.0).requires_grad(true);
        let mut adam = AdamState::new(AdamConfig::default());
        w.set_grad(Some(vec![1.0]));
        adam.step(&mut [("w", &mut w)]).unwrap();
        assert!(w.grad().is_none());
    }
}
