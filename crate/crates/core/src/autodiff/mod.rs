//! Minimal reverse-mode automatic differentiation.
//!
//! Dense `f64` tensors, a flat operation tape, Adam, named-tensor
//! checkpoints, and a finite-difference gradient checker. The op set is
//! exactly what the classifier requires; there is no broadcasting.

mod adam;
mod checkpoint;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::NamedTensors;
pub use gradcheck::{check_gradients, GradCheckReport};
pub use tape::{Mode, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{axis} index {index} out of range for size {size}")]
    IndexOutOfRange {
        index: usize,
        size: usize,
        axis: &'static str,
    },
    #[error("sequence of length {len} is shorter than convolution width {width}")]
    SequenceTooShort { len: usize, width: usize },
    #[error("time axis is empty")]
    EmptyTimeAxis,
    #[error("all time steps are masked as padding")]
    AllPadded,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("dropout probability {0} outside [0, 1)")]
    InvalidDropout(f64),
    #[error("invalid checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
