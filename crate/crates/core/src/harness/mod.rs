//! Experiment orchestration: folds, metrics, synthetic data, the training
//! loop, cross-validation runs, and report files.

pub mod experiment;
pub mod folds;
pub mod metrics;
pub mod report;
pub mod synth;
pub mod train;

pub use experiment::{
    encode_documents, matrix_windows, prepare_documents, run_window_matrix, run_xval,
    ExperimentConfig, ExperimentResult, FoldResult,
};
pub use folds::{kfold_split, Fold, FoldPlan};
pub use metrics::{evaluate_pairs, Confusion, Metrics};
pub use report::{reference_targets, write_csv, write_json, Provenance, ReferenceTarget};
pub use synth::generate_synthetic_corpus;
pub use train::{eval_loss_accuracy, train_fold, EpochStats, FoldOutcome, TrainConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("need at least {need} users for this split, have {have}")]
    TooFewUsers { have: usize, need: usize },
    #[error("dataset contains a single class; need both labels")]
    SingleClass,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("invalid argument: {0}")]
    InvalidRange(String),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Embedding(#[from] crate::embeddings::EmbeddingError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Tensor(#[from] crate::autodiff::TensorError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
