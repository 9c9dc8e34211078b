//! Cross-validation experiments and the observation-window matrix.
//!
//! One experiment = one window spec × k folds. Every fold rebuilds its
//! vocabulary from its own training split (no test leakage), derives its
//! seed as `seed ^ fold_index`, and trains an independent model, so folds
//! can run in parallel without sharing state.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{kfold_split, Fold};
use super::metrics::{evaluate_pairs, Metrics};
use super::train::{train_fold, EpochStats, TrainConfig};
use super::HarnessError;
use crate::corpus::{build_document, ConcatOptions, CorpusError, Document, UserRecord, WindowSpec};
use crate::embeddings::{build_vocab, init_embedding_matrix, StackedEmbedding, Vocabulary};
use crate::embeddings::{PAD_TOKEN, UNK_TOKEN};
use crate::model::{EncodedDoc, SercnnConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub window: WindowSpec,
    pub model: SercnnConfig,
    pub train: TrainConfig,
    pub concat: ConcatOptions,
    pub folds: usize,
    pub seed: u64,
    /// Train folds concurrently; results are identical to sequential runs.
    pub parallel_folds: bool,
    /// Directory for per-fold vocabulary caches (none = no caching).
    pub cache_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            window: WindowSpec::Full,
            model: SercnnConfig::default(),
            train: TrainConfig::default(),
            concat: ConcatOptions::default(),
            folds: 5,
            seed: 17,
            parallel_folds: false,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_users: usize,
    pub vocab_size: usize,
    pub parameter_count: usize,
    pub best_epoch: usize,
    pub metrics: Metrics,
    pub curve: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    /// Window label, e.g. `E10` or `full`.
    pub window: String,
    pub config: ExperimentConfig,
    /// Parameter budget of the nominal model config; per-fold counts vary
    /// with their actual vocabulary sizes.
    pub parameter_budget: usize,
    pub folds: Vec<FoldResult>,
    pub mean: Metrics,
}

/// Run the per-user pipeline (anchor removal → window → flatten) over the
/// dataset. Users that are all anchors, or whose windowed text is empty,
/// are skipped with a warning; they cannot be classified.
pub fn prepare_documents(
    users: &[UserRecord],
    window: WindowSpec,
    opts: &ConcatOptions,
) -> Result<Vec<Document>, HarnessError> {
    let mut docs = Vec::with_capacity(users.len());
    for user in users {
        match build_document(user, window, opts) {
            Ok(doc) if doc.tokens.is_empty() => {
                log::warn!("user {}: empty document, skipped", user.user_id);
            }
            Ok(doc) => docs.push(doc),
            Err(CorpusError::AllPostsRemoved { user_id }) => {
                log::warn!("user {user_id}: only anchor posts, skipped");
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(docs)
}

pub fn encode_documents(docs: &[&Document], vocab: &Vocabulary) -> Vec<EncodedDoc> {
    docs.iter()
        .map(|d| EncodedDoc {
            ids: vocab.encode(d.tokens.iter().map(String::as_str)),
            label: d.label,
        })
        .collect()
}

fn fnv64(chunks: impl IntoIterator<Item = u8>) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in chunks {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn vocab_cache_key(train_docs: &[&Document], budget: usize) -> u64 {
    let bytes = budget
        .to_le_bytes()
        .into_iter()
        .chain(train_docs.iter().flat_map(|doc| {
            doc.source_user
                .bytes()
                .chain([0xFF])
                .chain(doc.tokens.iter().flat_map(|t| t.bytes().chain([0x00])))
        }));
    fnv64(bytes)
}

/// Build (or reuse) the training-split vocabulary. Cache files hold one
/// token per line, keyed by a content hash, so a hit reproduces the built
/// vocabulary byte for byte.
fn fold_vocab(
    train_docs: &[&Document],
    budget: usize,
    cache_dir: Option<&Path>,
) -> Result<Vocabulary, HarnessError> {
    let path = cache_dir.map(|dir| dir.join(format!("vocab_{:016x}.txt", vocab_cache_key(train_docs, budget))));
    if let Some(path) = &path {
        if let Ok(contents) = std::fs::read_to_string(path) {
            let tokens: Vec<String> = contents.lines().map(str::to_owned).collect();
            if tokens.len() >= 2 && tokens[0] == PAD_TOKEN && tokens[1] == UNK_TOKEN {
                return Ok(Vocabulary::from_tokens(tokens));
            }
            log::warn!("ignoring malformed vocab cache {}", path.display());
        }
    }
    let vocab = build_vocab(train_docs, budget)?;
    if let Some(path) = &path {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, vocab.tokens().join("\n"))?;
    }
    Ok(vocab)
}

fn run_fold(
    fold_index: usize,
    fold: &Fold,
    docs: &[Document],
    se: Option<&StackedEmbedding>,
    config: &ExperimentConfig,
) -> Result<FoldResult, HarnessError> {
    let fold_seed = config.seed ^ fold_index as u64;
    let train_docs: Vec<&Document> = fold.train.iter().map(|&i| &docs[i]).collect();
    let val_docs: Vec<&Document> = fold.val.iter().map(|&i| &docs[i]).collect();
    let test_docs: Vec<&Document> = fold.test.iter().map(|&i| &docs[i]).collect();

    let vocab = fold_vocab(&train_docs, config.model.vocab_size, config.cache_dir.as_deref())?;
    let mut model_config = config.model.clone();
    model_config.vocab_size = vocab.len();
    // The embedding width is whatever the stacked components add up to.
    if let Some(se) = se {
        model_config.embed_dim = se.dim();
    }
    let embedding = se.map(|se| init_embedding_matrix(&vocab, se, fold_seed));

    let train_enc = encode_documents(&train_docs, &vocab);
    let val_enc = encode_documents(&val_docs, &vocab);
    let test_enc = encode_documents(&test_docs, &vocab);

    let outcome = train_fold(
        model_config,
        embedding,
        &train_enc,
        &val_enc,
        &config.train,
        fold_seed,
    )?;

    let mut pairs = Vec::with_capacity(test_enc.len());
    for doc in &test_enc {
        let (pred, _) = outcome.model.predict(&doc.ids)?;
        pairs.push((doc.label, pred));
    }
    Ok(FoldResult {
        fold: fold_index,
        test_users: test_enc.len(),
        vocab_size: vocab.len(),
        parameter_count: outcome.model.count_parameters(),
        best_epoch: outcome.best_epoch,
        metrics: evaluate_pairs(&pairs)?,
        curve: outcome.curve,
    })
}

/// One full cross-validation experiment under `config.window`.
pub fn run_xval(
    users: &[UserRecord],
    se: Option<&StackedEmbedding>,
    config: &ExperimentConfig,
) -> Result<ExperimentResult, HarnessError> {
    let docs = prepare_documents(users, config.window, &config.concat)?;
    let labels: Vec<u8> = docs.iter().map(|d| d.label).collect();
    let plan = kfold_split(&labels, config.folds, config.seed)?;

    let folds: Vec<FoldResult> = if config.parallel_folds {
        plan.folds
            .par_iter()
            .enumerate()
            .map(|(i, fold)| run_fold(i, fold, &docs, se, config))
            .collect::<Result<_, _>>()?
    } else {
        plan.folds
            .iter()
            .enumerate()
            .map(|(i, fold)| run_fold(i, fold, &docs, se, config))
            .collect::<Result<_, _>>()?
    };

    let mean = Metrics::mean(&folds.iter().map(|f| f.metrics).collect::<Vec<_>>());
    Ok(ExperimentResult {
        window: config.window.label(),
        parameter_budget: config.model.parameter_budget(),
        config: config.clone(),
        folds,
        mean,
    })
}

/// The fixed-window experiment grid: three window sizes at both anchors,
/// plus the full history.
pub fn matrix_windows() -> [WindowSpec; 7] {
    [
        WindowSpec::Earliest(10),
        WindowSpec::Latest(10),
        WindowSpec::Earliest(30),
        WindowSpec::Latest(30),
        WindowSpec::Earliest(100),
        WindowSpec::Latest(100),
        WindowSpec::Full,
    ]
}

/// Run the whole window matrix with a shared seed, so every row is
/// evaluated on identical fold membership.
pub fn run_window_matrix(
    users: &[UserRecord],
    se: Option<&StackedEmbedding>,
    base: &ExperimentConfig,
) -> Result<Vec<ExperimentResult>, HarnessError> {
    matrix_windows()
        .into_iter()
        .map(|window| {
            let config = ExperimentConfig {
                window,
                ..base.clone()
            };
            run_xval(users, se, &config)
        })
        .collect()
}
