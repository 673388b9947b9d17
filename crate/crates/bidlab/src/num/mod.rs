//! Dense-tensor numerical core: row-major `f32` tensors, a define-by-run
//! tape for reverse-mode differentiation, a bias-corrected adaptive-moment
//! optimizer, and a finite-difference gradient checker.
//!
//! Model math is 32-bit; reductions (sums, means, softmax denominators,
//! layer-norm statistics) accumulate in 64-bit. The ReLU subgradient at 0
//! is 0, so piecewise-linear losses have a deterministic kink behavior.

mod adam;
mod backward;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_tape, GradCheckReport, ParamError};
pub use tape::{Tape, TensorRef};
pub use tensor::Tensor;
