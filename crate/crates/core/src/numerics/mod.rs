//! Minimal differentiable numeric substrate.
//!
//! Exactly the forward operations the models need, with reverse-mode
//! gradients recorded on a [`Tape`] and verified against central finite
//! differences by [`grad_check`]. Everything is `f64`; there is no GPU,
//! no broadcasting and no operator fusion beyond what the models require.

mod conv;
mod gradcheck;
mod ops;
mod params;
mod tape;
mod tensor;

pub use conv::{
    conv_downsample, conv_output_len, receptive_field, time_stride, Activation, ConvLayer,
    ConvLayerSpec,
};
pub use gradcheck::{grad_check, GradCheckReport, ParamCheck};
pub use ops::{log_softmax, lstm_cell_step, sigmoid, softmax, LstmCellParams};
pub use params::{BoundParams, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors raised by the numeric substrate.
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("empty input to {0}")]
    EmptyInput(&'static str),
    #[error("non-finite input to {0}")]
    NonFiniteInput(&'static str),
    #[error("all positions masked out in {0}")]
    AllMasked(&'static str),
    #[error("input of {got} frames is shorter than the receptive field ({need})")]
    InputTooShort { got: usize, need: usize },
    #[error("backward target must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("epsilon {0} must lie in (0, 1e-3]")]
    BadEpsilon(f64),
    #[error("loss function is not deterministic: evaluations {0} and {1} differ")]
    NonDeterministicLoss(f64, f64),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
}
