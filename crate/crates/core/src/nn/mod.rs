//! Minimal differentiable layer stack: dense layers, batch normalization,
//! activations and dropout with hand-written backward passes, BCE/MSE
//! losses, Adam, a finite-difference gradient checker and a text weights
//! format.
//!
//! Batches are row-major matrices of shape `(batch, features)`.

mod adam;
mod gradcheck;
mod io;
mod layers;
mod loss;
mod matrix;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, grad_check_fn, relative_error, GradCheckOptions, GradCheckReport};
pub use io::{read_layers, write_layers, WeightsHeader, WeightsReader};
pub use layers::{Activation, ActivationKind, BatchNorm, Dropout, Init, Layer, Linear, Sequential};
pub use loss::{bce_loss, mse_loss, BCE_CLAMP};
pub use matrix::Matrix;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("batch norm in training mode needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("backward called before forward in {0}")]
    NoCache(&'static str),
    #[error("weights format error at line {line}: {message}")]
    Format { line: usize, message: String },
}

/// A differentiable stage. Parameter gradients accumulate across
/// `backward` calls until [`Module::zero_grad`].
pub trait Module {
    fn forward(&mut self, x: &Matrix) -> Result<Matrix, NnError>;

    /// Propagates `grad` (d loss / d output of the last forward) and returns
    /// d loss / d input.
    fn backward(&mut self, grad: &Matrix) -> Result<Matrix, NnError>;

    /// Visits every trainable tensor as `(values, grads)` in a fixed order.
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64]));

    fn set_training(&mut self, training: bool);

    /// When off, `backward` still returns input gradients but leaves
    /// parameter gradient buffers untouched.
    fn set_requires_grad(&mut self, on: bool);

    /// Reuse the current dropout masks on subsequent training forwards.
    fn freeze_dropout(&mut self, frozen: bool);

    fn zero_grad(&mut self) {
        self.visit_params(&mut |_, g| g.fill(0.0));
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p, _| n += p.len());
        n
    }

    /// Flat snapshot of all gradient buffers.
    fn grads_snapshot(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, g| out.extend_from_slice(g));
        out
    }

    /// Flat snapshot of all parameter values.
    fn params_snapshot(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |p, _| out.extend_from_slice(p));
        out
    }
}
