//! Owned dense tensor values.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::num::tape::Tape;

/// Dense n-dimensional array of `f32` in row-major order.
///
/// A tensor is a plain value until [`Tape::insert`] records it as a leaf of
/// the active tape, which sets `node_id`. After a backward pass,
/// [`Tensor::pull_grad`] copies the accumulated gradient out of the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    values: Vec<f32>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
    pub(crate) node_id: Option<usize>,
}

impl Tensor {
    pub fn from_values(dims: &[usize], values: Vec<f32>) -> Result<Self> {
        let numel: usize = dims.iter().product();
        if dims.iter().any(|&d| d == 0) || values.len() != numel {
            return Err(Error::Shape {
                op: "from_values",
                lhs: dims.to_vec(),
                rhs: vec![values.len()],
            });
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            values,
            requires_grad: false,
            grad: None,
            node_id: None,
        })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let numel: usize = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            values: vec![0.0; numel],
            requires_grad: false,
            grad: None,
            node_id: None,
        }
    }

    pub fn scalar(v: f32) -> Self {
        Tensor::from_values(&[1], vec![v]).expect("scalar shape")
    }

    /// Gaussian init with the given standard deviation.
    pub fn randn(dims: &[usize], std: f32, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0_f32, std.max(f32::MIN_POSITIVE)).expect("std > 0");
        let numel: usize = dims.iter().product();
        let values = (0..numel).map(|_| normal.sample(rng)).collect();
        Tensor {
            dims: dims.to_vec(),
            values,
            requires_grad: false,
            grad: None,
            node_id: None,
        }
    }

    pub fn requires_grad(mut self, yes: bool) -> Self {
        self.requires_grad = yes;
        self
    }

    pub fn is_grad_required(&self) -> bool {
        self.requires_grad
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.numel(), 1);
        self.values[0]
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<f32>>) {
        if let Some(g) = &grad {
            debug_assert_eq!(g.len(), self.values.len());
        }
        self.grad = grad;
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn node_id(&self) -> Option<usize> {
        self.node_id
    }

    /// Accumulate this tensor's gradient out of `tape` after a backward pass.
    ///
    /// Leaves that the loss never touched get an explicit zero gradient, so
    /// an optimizer step over a partially-used parameter set stays legal.
    /// Errors with a missing-node report when the tensor was never inserted.
    pub fn pull_grad(&mut self, tape: &Tape) -> Result<()> {
        let id = self.node_id.ok_or(Error::MissingNode)?;
        let grad = self
            .grad
            .get_or_insert_with(|| vec![0.0; self.values.len()]);
        if let Some(g) = tape.grad_by_id(id) {
            if g.len() != grad.len() {
                return Err(Error::Shape {
                    op: "pull_grad",
                    lhs: self.dims.clone(),
                    rhs: vec![g.len()],
                });
            }
            for (acc, &gi) in grad.iter_mut().zip(g) {
                *acc += gi;
            }
        }
        Ok(())
    }
}
