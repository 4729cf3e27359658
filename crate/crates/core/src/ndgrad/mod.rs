//! Small reverse-mode autodiff over dense `f64` arrays.
//!
//! Only the primitives the impedance GAN needs are provided: 1D convolution,
//! dense layers, leaky ReLU, pooling/upsampling on the last axis, and the two
//! losses (logit cross-entropy and fixed-variance Gaussian NLL).

mod adamp;
mod tape;
mod tensor;

pub use adamp::{clip_global_norm, AdamPConfig, AdamPState, StepInfo};
pub use tape::{gaussian_nll, Gradients, Tape, Var};
pub use tensor::Tensor;


use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// A kernel bank for [`Tape::conv1d`]: `kernels` is `[K_out, R_in, K_w]`,
/// `biases` is `[K_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernelBank {
    pub kernels: Tensor,
    pub biases: Tensor,
}

impl ConvKernelBank {
    pub fn new(kernels: Tensor, biases: Tensor) -> Result<Self, GradError> {
        match *kernels.shape() {
            [k, _, _] if biases.shape() == [k] => Ok(Self { kernels, biases }),
            _ => Err(GradError::Shape(format!(
                "kernel bank {:?} with biases {:?}",
                kernels.shape(),
                biases.shape()
            ))),
        }
    }

    /// Convolves a single untracked input, for callers that do not need gradients.
    pub fn apply(&self, input: &Tensor, padding: usize) -> Result<Tensor, GradError> {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone())?;
        let k = tape.leaf(self.kernels.clone())?;
        let b = tape.leaf(self.biases.clone())?;
        let y = tape.conv1d(x, k, b, padding)?;
        Ok(tape.value(y).clone())
    }
}
