//! Depression classification from social media post histories.
//!
//! The pipeline: user post histories are cleaned and truncated to a fixed
//! observation window, encoded with stacked pretrained word embeddings, and
//! classified by a small convolutional network that reattaches the mean
//! pooled embedding context to the convolutional features. A cross-validation
//! harness reproduces the fixed-window experiment grid end to end.
//!
//! Modules:
//! - [`corpus`]: post preprocessing, observation windows, dataset statistics
//! - [`embeddings`]: pretrained vector parsing, vocabulary, stacked lookup
//! - [`autodiff`]: tape-based reverse-mode differentiation and Adam
//! - [`model`]: the classifier itself
//! - [`harness`]: folds, metrics, synthetic data, training, experiment runs

pub mod autodiff;
pub mod corpus;
pub mod embeddings;
pub mod harness;
pub mod model;

pub use autodiff::{Tensor, TensorError};
pub use corpus::{Document, Post, UserRecord, WindowSpec};
pub use model::{SercnnConfig, SercnnModel};
