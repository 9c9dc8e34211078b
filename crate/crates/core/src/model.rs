//! The classifier: embedding lookup, three n-gram convolution banks with
//! max-over-time pooling, the mean-pooled embedding context re-attached to
//! the convolutional features, and two fully connected layers into softmax.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdamState, Mode, NamedTensors, Tape, Tensor, TensorError, Var};
use crate::embeddings::PAD_ID;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("checkpoint missing tensor {0}")]
    MissingTensor(String),
    #[error("tensor {name} has shape {got:?}, expected {want:?}")]
    WrongShape {
        name: String,
        got: Vec<usize>,
        want: Vec<usize>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("config file: {0}")]
    ConfigJson(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SercnnConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub filter_widths: Vec<usize>,
    pub filters_per_width: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub dropout_p: f64,
}

impl Default for SercnnConfig {
    fn default() -> Self {
        SercnnConfig {
            vocab_size: 10_000,
            embed_dim: 200,
            filter_widths: vec![1, 2, 3],
            filters_per_width: 50,
            hidden_dim: 100,
            num_classes: 2,
            dropout_p: 0.5,
        }
    }
}

impl SercnnConfig {
    /// Width of the pooled convolutional context.
    pub fn cnn_context_dim(&self) -> usize {
        self.filters_per_width * self.filter_widths.len()
    }

    /// Width of the combined context entering FC1.
    pub fn fc1_input_dim(&self) -> usize {
        self.cnn_context_dim() + self.embed_dim
    }

    /// Minimum document length the convolution banks can consume; shorter
    /// inputs are padded up to this.
    pub fn min_length(&self) -> usize {
        self.filter_widths.iter().copied().max().unwrap_or(1)
    }

    /// Closed-form trainable parameter count:
    /// `V·d + Σ_w (w·d+1)·F + (|widths|·F + d)·H + H + H·C + C`.
    pub fn parameter_budget(&self) -> usize {
        let conv: usize = self
            .filter_widths
            .iter()
            .map(|w| (w * self.embed_dim + 1) * self.filters_per_width)
            .sum();
        self.vocab_size * self.embed_dim
            + conv
            + self.fc1_input_dim() * self.hidden_dim
            + self.hidden_dim
            + self.hidden_dim * self.num_classes
            + self.num_classes
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size < 2 {
            return Err(ModelError::BadConfig(
                "vocab_size must cover <pad> and <unk>".into(),
            ));
        }
        if self.embed_dim == 0 || self.filters_per_width == 0 || self.hidden_dim == 0 {
            return Err(ModelError::BadConfig("zero-width layer".into()));
        }
        if self.filter_widths.is_empty() || self.filter_widths.contains(&0) {
            return Err(ModelError::BadConfig("filter widths must be ≥ 1".into()));
        }
        if self.num_classes < 2 {
            return Err(ModelError::BadConfig("need at least two classes".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(ModelError::BadConfig(format!(
                "dropout_p {} outside [0, 1)",
                self.dropout_p
            )));
        }
        Ok(())
    }
}

/// A tokenized document mapped to vocabulary ids, ready for the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedDoc {
    pub ids: Vec<usize>,
    pub label: u8,
}

#[derive(Debug, Clone)]
pub struct SercnnModel {
    config: SercnnConfig,
    embedding: Tensor,
    conv_filters: Vec<Tensor>,
    conv_biases: Vec<Tensor>,
    fc1_weight: Tensor,
    fc1_bias: Tensor,
    fc2_weight: Tensor,
    fc2_bias: Tensor,
}

/// Tape handles for one batch's parameter leaves, in canonical order.
struct ParamVars {
    embedding: Var,
    convs: Vec<(Var, Var)>,
    fc1_weight: Var,
    fc1_bias: Var,
    fc2_weight: Var,
    fc2_bias: Var,
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::from_vec(shape, data).expect("shape matches data")
}

impl SercnnModel {
    /// Fresh model with a uniformly random embedding table. Use
    /// [`SercnnModel::with_embedding`] to start from pretrained vectors.
    pub fn new(config: SercnnConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![0.0; config.vocab_size * config.embed_dim];
        // PAD row stays zero; every other row draws from ±0.25.
        for v in &mut data[config.embed_dim..] {
            *v = rng.gen_range(-0.25..=0.25);
        }
        let embedding = Tensor::from_vec(&[config.vocab_size, config.embed_dim], data)?;
        Self::assemble(config, embedding, rng)
    }

    /// Fresh model seeded with a prepared embedding matrix (typically from
    /// [`crate::embeddings::init_embedding_matrix`]).
    pub fn with_embedding(
        config: SercnnConfig,
        embedding: Tensor,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let want = [config.vocab_size, config.embed_dim];
        if embedding.shape() != want {
            return Err(ModelError::WrongShape {
                name: "embedding".into(),
                got: embedding.shape().to_vec(),
                want: want.to_vec(),
            });
        }
        let rng = ChaCha8Rng::seed_from_u64(seed);
        Self::assemble(config, embedding, rng)
    }

    fn assemble(
        config: SercnnConfig,
        embedding: Tensor,
        mut rng: ChaCha8Rng,
    ) -> Result<Self, ModelError> {
        let d = config.embed_dim;
        let nf = config.filters_per_width;
        let mut conv_filters = Vec::with_capacity(config.filter_widths.len());
        let mut conv_biases = Vec::with_capacity(config.filter_widths.len());
        for &w in &config.filter_widths {
            conv_filters.push(glorot(&mut rng, &[nf, w * d], w * d, nf));
            conv_biases.push(Tensor::zeros(&[nf]));
        }
        let fc1_in = config.fc1_input_dim();
        let fc1_weight = glorot(&mut rng, &[config.hidden_dim, fc1_in], fc1_in, config.hidden_dim);
        let fc1_bias = Tensor::zeros(&[config.hidden_dim]);
        let fc2_weight = glorot(
            &mut rng,
            &[config.num_classes, config.hidden_dim],
            config.hidden_dim,
            config.num_classes,
        );
        let fc2_bias = Tensor::zeros(&[config.num_classes]);
        Ok(SercnnModel {
            config,
            embedding,
            conv_filters,
            conv_biases,
            fc1_weight,
            fc1_bias,
            fc2_weight,
            fc2_bias,
        })
    }

    pub fn config(&self) -> &SercnnConfig {
        &self.config
    }

    pub fn embedding(&self) -> &Tensor {
        &self.embedding
    }

    /// Exact count of trainable scalars across all tensors.
    pub fn count_parameters(&self) -> usize {
        let conv: usize = self
            .conv_filters
            .iter()
            .chain(&self.conv_biases)
            .map(Tensor::len)
            .sum();
        self.embedding.len()
            + conv
            + self.fc1_weight.len()
            + self.fc1_bias.len()
            + self.fc2_weight.len()
            + self.fc2_bias.len()
    }

    /// Parameters in canonical order (embedding, conv banks by width,
    /// FC layers); the same order [`SercnnModel::train_step`] feeds Adam.
    pub fn adam_params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embedding];
        for (f, b) in self.conv_filters.iter().zip(&self.conv_biases) {
            out.push(f);
            out.push(b);
        }
        out.extend([&self.fc1_weight, &self.fc1_bias, &self.fc2_weight, &self.fc2_bias]);
        out
    }

    pub fn to_named(&self) -> NamedTensors {
        let mut named = NamedTensors::new();
        named.insert("embedding", self.embedding.clone());
        for ((&w, f), b) in self
            .config
            .filter_widths
            .iter()
            .zip(&self.conv_filters)
            .zip(&self.conv_biases)
        {
            named.insert(format!("conv_w{w}_filters"), f.clone());
            named.insert(format!("conv_w{w}_bias"), b.clone());
        }
        named.insert("fc1_weight", self.fc1_weight.clone());
        named.insert("fc1_bias", self.fc1_bias.clone());
        named.insert("fc2_weight", self.fc2_weight.clone());
        named.insert("fc2_bias", self.fc2_bias.clone());
        named
    }

    pub fn from_named(config: SercnnConfig, named: &NamedTensors) -> Result<Self, ModelError> {
        config.validate()?;
        let fetch = |name: String, want: Vec<usize>| -> Result<Tensor, ModelError> {
            let t = named
                .get(&name)
                .ok_or_else(|| ModelError::MissingTensor(name.clone()))?;
            if t.shape() != want {
                return Err(ModelError::WrongShape {
                    name,
                    got: t.shape().to_vec(),
                    want,
                });
            }
            Ok(t.clone())
        };
        let d = config.embed_dim;
        let nf = config.filters_per_width;
        let mut conv_filters = Vec::new();
        let mut conv_biases = Vec::new();
        for &w in &config.filter_widths {
            conv_filters.push(fetch(format!("conv_w{w}_filters"), vec![nf, w * d])?);
            conv_biases.push(fetch(format!("conv_w{w}_bias"), vec![nf])?);
        }
        Ok(SercnnModel {
            embedding: fetch("embedding".into(), vec![config.vocab_size, d])?,
            conv_filters,
            conv_biases,
            fc1_weight: fetch(
                "fc1_weight".into(),
                vec![config.hidden_dim, config.fc1_input_dim()],
            )?,
            fc1_bias: fetch("fc1_bias".into(), vec![config.hidden_dim])?,
            fc2_weight: fetch(
                "fc2_weight".into(),
                vec![config.num_classes, config.hidden_dim],
            )?,
            fc2_bias: fetch("fc2_bias".into(), vec![config.num_classes])?,
            config,
        })
    }

    /// Restore parameters from an in-memory snapshot without touching the
    /// config (used for best-epoch restoration; no f32 quantization).
    pub fn restore(&mut self, named: &NamedTensors) -> Result<(), ModelError> {
        *self = Self::from_named(self.config.clone(), named)?;
        Ok(())
    }

    /// Write the checkpoint to `path` and the config JSON to `path` + ".json".
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        self.to_named().save(path)?;
        let config_path = sidecar_config_path(path);
        std::fs::write(&config_path, serde_json::to_string_pretty(&self.config)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let config: SercnnConfig =
            serde_json::from_str(&std::fs::read_to_string(sidecar_config_path(path))?)?;
        let named = NamedTensors::load(path)?;
        Self::from_named(config, &named)
    }

    fn leaf_params(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            embedding: tape.leaf(self.embedding.clone()),
            convs: self
                .conv_filters
                .iter()
                .zip(&self.conv_biases)
                .map(|(f, b)| (tape.leaf(f.clone()), tape.leaf(b.clone())))
                .collect(),
            fc1_weight: tape.leaf(self.fc1_weight.clone()),
            fc1_bias: tape.leaf(self.fc1_bias.clone()),
            fc2_weight: tape.leaf(self.fc2_weight.clone()),
            fc2_bias: tape.leaf(self.fc2_bias.clone()),
        }
    }

    /// Build one document's logits on the tape. Documents shorter than the
    /// widest filter are padded up to it; each convolution bank pools over
    /// the first `max(1, real_len − w + 1)` positions, so trailing padding
    /// can never change the output.
    fn doc_logits(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        ids: &[usize],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, TensorError> {
        let min_len = self.config.min_length();
        let mut padded;
        let ids = if ids.len() < min_len {
            padded = ids.to_vec();
            padded.resize(min_len, PAD_ID);
            &padded[..]
        } else {
            ids
        };
        let mask: Vec<bool> = ids.iter().map(|&id| id != PAD_ID).collect();
        debug_assert!(
            mask.iter().skip_while(|&&m| m).all(|&m| !m),
            "padding must be trailing"
        );
        let real_len = mask.iter().filter(|&&m| m).count();

        let embedded = tape.embedding_lookup(pv.embedding, ids, Some(PAD_ID))?;
        let mut contexts = Vec::with_capacity(self.config.filter_widths.len() + 1);
        for (&w, &(filters, bias)) in self.config.filter_widths.iter().zip(&pv.convs) {
            let feature_map = tape.conv1d_ngram(embedded, filters, bias, w)?;
            let pool_rows = real_len.saturating_sub(w - 1).max(1);
            contexts.push(tape.max_over_first_rows(feature_map, pool_rows)?);
        }
        contexts.push(tape.mean_over_time(embedded, &mask)?);
        let combined = tape.concat(&contexts)?;

        let dropped = match dropout_rng {
            Some(rng) => tape.dropout(combined, self.config.dropout_p, Mode::Train, rng)?,
            None => combined,
        };
        let hidden = tape.affine(dropped, pv.fc1_weight, pv.fc1_bias)?;
        let hidden = tape.relu(hidden);
        tape.affine(hidden, pv.fc2_weight, pv.fc2_bias)
    }

    /// One optimizer step on a mini-batch: forward in train mode, mean
    /// cross-entropy, backward, Adam. Returns the batch loss.
    /// `freeze_embeddings` keeps the embedding table (and its Adam moments)
    /// untouched.
    pub fn train_step(
        &mut self,
        batch: &[&EncodedDoc],
        opt: &mut AdamState,
        rng: &mut ChaCha8Rng,
        freeze_embeddings: bool,
    ) -> Result<f64, TensorError> {
        if batch.is_empty() {
            return Err(TensorError::ShapeMismatch("empty training batch".into()));
        }
        let mut tape = Tape::new();
        let pv = self.leaf_params(&mut tape);
        let mut rows = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        for doc in batch {
            rows.push(self.doc_logits(&mut tape, &pv, &doc.ids, Some(&mut *rng))?);
            labels.push(doc.label as usize);
        }
        let logits = tape.stack_rows(&rows)?;
        let (loss, _) = tape.softmax_cross_entropy(logits, &labels)?;
        tape.backward(loss)?;

        let mut vars = vec![pv.embedding];
        for (f, b) in &pv.convs {
            vars.push(*f);
            vars.push(*b);
        }
        vars.extend([pv.fc1_weight, pv.fc1_bias, pv.fc2_weight, pv.fc2_bias]);
        let mut grads: Vec<Option<Tensor>> = vars.iter().map(|&v| tape.take_grad(v)).collect();
        if freeze_embeddings {
            grads[0] = None;
        }
        let loss_value = tape.value(loss).item();

        let mut params: Vec<&mut Tensor> = vec![&mut self.embedding];
        for (f, b) in self.conv_filters.iter_mut().zip(self.conv_biases.iter_mut()) {
            params.push(f);
            params.push(b);
        }
        params.extend([
            &mut self.fc1_weight,
            &mut self.fc1_bias,
            &mut self.fc2_weight,
            &mut self.fc2_bias,
        ]);
        opt.step(&mut params, &grads)?;
        Ok(loss_value)
    }

    /// Class probabilities in eval mode (dropout off). Pure function of the
    /// parameters and ids.
    pub fn forward_probs(&self, ids: &[usize]) -> Result<Vec<f64>, TensorError> {
        let mut tape = Tape::new();
        let pv = self.leaf_params(&mut tape);
        let logits_var = self.doc_logits(&mut tape, &pv, ids, None)?;
        let logits = tape.value(logits_var).data();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / denom).collect())
    }

    /// Argmax label plus probabilities; exact ties go to the lower index.
    pub fn predict(&self, ids: &[usize]) -> Result<(u8, Vec<f64>), TensorError> {
        let probs = self.forward_probs(ids)?;
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        Ok((best as u8, probs))
    }
}

fn sidecar_config_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    os.into()
}

/// A small config for correctness tests: every layer a few units wide.
#[cfg(test)]
pub(crate) fn tiny_config() -> SercnnConfig {
    SercnnConfig {
        vocab_size: 20,
        embed_dim: 6,
        filter_widths: vec![1, 2, 3],
        filters_per_width: 2,
        hidden_dim: 4,
        num_classes: 2,
        dropout_p: 0.5,
    }
}
