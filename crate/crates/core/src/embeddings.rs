//! Pretrained word vectors, task vocabulary, and the stacked embedding.
//!
//! Pretrained files use the GloVe text layout, `word v₁ … v_d` per line,
//! optionally gzip-compressed (`.gz`). Stacking concatenates per-word vectors
//! from every component over the union of their vocabularies; a component
//! that lacks a word contributes a zero subvector.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::corpus::Document;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Out-of-vocabulary rows are drawn uniformly from this range.
const INIT_RANGE: f64 = 0.25;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("line {line}: expected {expected} values, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: malformed embedding line")]
    MalformedLine { line: usize },
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("invalid embedding cache: {0}")]
    BadCache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One pretrained embedding table: word → row of `dim` values.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedEmbedding {
    pub name: String,
    dim: usize,
    vocab: HashMap<String, usize>,
    matrix: Vec<f64>,
}

impl PretrainedEmbedding {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        PretrainedEmbedding {
            name: name.into(),
            dim,
            vocab: HashMap::new(),
            matrix: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vocab.contains_key(word)
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vocab
            .get(word)
            .map(|&row| &self.matrix[row * self.dim..(row + 1) * self.dim])
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.vocab.keys().map(String::as_str)
    }

    /// Insert a word; duplicates keep the first occurrence.
    pub fn insert(&mut self, word: &str, values: &[f64]) {
        debug_assert_eq!(values.len(), self.dim);
        if self.vocab.contains_key(word) {
            return;
        }
        let row = self.matrix.len() / self.dim;
        self.vocab.insert(word.to_owned(), row);
        self.matrix.extend_from_slice(values);
    }
}

/// Parse a GloVe-format file; `.gz` paths are decompressed transparently.
pub fn parse_embedding_file(
    path: &Path,
    expected_dim: usize,
) -> Result<PretrainedEmbedding, EmbeddingError> {
    let file = std::fs::File::open(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "embedding".to_owned());
    if path.extension().is_some_and(|e| e == "gz") {
        let decoder = flate2::read::GzDecoder::new(file);
        parse_embedding_reader(std::io::BufReader::new(decoder), &name, expected_dim)
    } else {
        parse_embedding_reader(std::io::BufReader::new(file), &name, expected_dim)
    }
}

/// Infer the vector width from the first data line, for callers that do
/// not know it up front. `.gz` paths are decompressed transparently.
pub fn detect_embedding_dim(path: &Path) -> Result<usize, EmbeddingError> {
    let file = std::fs::File::open(path)?;
    let reader: Box<dyn BufRead> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(std::io::BufReader::new(flate2::read::GzDecoder::new(file)))
    } else {
        Box::new(std::io::BufReader::new(file))
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields = line.split_whitespace().count();
        if fields < 2 {
            return Err(EmbeddingError::MalformedLine { line: i + 1 });
        }
        return Ok(fields - 1);
    }
    Err(EmbeddingError::MalformedLine { line: 1 })
}

pub fn parse_embedding_reader<R: BufRead>(
    reader: R,
    name: &str,
    expected_dim: usize,
) -> Result<PretrainedEmbedding, EmbeddingError> {
    let mut emb = PretrainedEmbedding::new(name, expected_dim);
    let mut values = Vec::with_capacity(expected_dim);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().ok_or(EmbeddingError::MalformedLine { line: i + 1 })?;
        values.clear();
        for field in fields {
            let v: f64 = field
                .parse()
                .map_err(|_| EmbeddingError::MalformedLine { line: i + 1 })?;
            values.push(v);
        }
        if values.len() != expected_dim {
            return Err(EmbeddingError::DimensionMismatch {
                line: i + 1,
                expected: expected_dim,
                found: values.len(),
            });
        }
        emb.insert(word, &values);
    }
    Ok(emb)
}

/// Write in the same text layout `parse_embedding_reader` accepts, rows in
/// insertion order. Values use the shortest round-trip decimal form, so
/// parse → write → parse is the identity.
pub fn write_embedding<W: Write>(
    emb: &PretrainedEmbedding,
    out: &mut W,
) -> Result<(), EmbeddingError> {
    let mut rows: Vec<(&str, usize)> = emb.vocab.iter().map(|(w, &r)| (w.as_str(), r)).collect();
    rows.sort_by_key(|&(_, r)| r);
    for (word, row) in rows {
        write!(out, "{word}")?;
        for v in &emb.matrix[row * emb.dim..(row + 1) * emb.dim] {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Ordered concatenation of pretrained embeddings over their union
/// vocabulary.
#[derive(Debug, Clone)]
pub struct StackedEmbedding {
    components: Vec<PretrainedEmbedding>,
    dim: usize,
}

impl StackedEmbedding {
    pub fn new(components: Vec<PretrainedEmbedding>) -> Self {
        let dim = components.iter().map(|c| c.dim).sum();
        StackedEmbedding { components, dim }
    }

    /// Total stacked dimension, Σ component dims.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[PretrainedEmbedding] {
        &self.components
    }

    pub fn in_union(&self, word: &str) -> bool {
        self.components.iter().any(|c| c.contains(word))
    }

    pub fn union_size(&self) -> usize {
        let mut words: Vec<&str> = self
            .components
            .iter()
            .flat_map(|c| c.words())
            .collect();
        words.sort_unstable();
        words.dedup();
        words.len()
    }

    /// Concatenated vector for `word`; each component missing the word
    /// contributes zeros, so a word in no component maps to the zero vector.
    pub fn lookup(&self, word: &str) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim);
        for c in &self.components {
            match c.get(word) {
                Some(v) => out.extend_from_slice(v),
                None => out.resize(out.len() + c.dim, 0.0),
            }
        }
        out
    }
}

/// Task vocabulary: `<pad>` at 0, `<unk>` at 1, then the most frequent
/// training tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        debug_assert_eq!(tokens[PAD_ID], PAD_TOKEN);
        debug_assert_eq!(tokens[UNK_ID], UNK_TOKEN);
        let lookup = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, lookup }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.lookup.get(token).copied()
    }

    /// Map tokens to ids, unknown tokens to [`UNK_ID`].
    pub fn encode<'a, I: IntoIterator<Item = &'a str>>(&self, tokens: I) -> Vec<usize> {
        tokens
            .into_iter()
            .map(|t| self.id(t).unwrap_or(UNK_ID))
            .collect()
    }
}

/// Build the vocabulary from training documents only: `<pad>`, `<unk>`, then
/// the `n − 2` most frequent tokens, ties broken lexicographically.
pub fn build_vocab<D: std::borrow::Borrow<Document>>(
    corpus: &[D],
    n: usize,
) -> Result<Vocabulary, EmbeddingError> {
    if corpus.iter().all(|d| d.borrow().tokens.is_empty()) {
        return Err(EmbeddingError::EmptyCorpus);
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for doc in corpus {
        for token in &doc.borrow().tokens {
            if token != PAD_TOKEN && token != UNK_TOKEN {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut tokens = Vec::with_capacity(n.min(ranked.len() + 2));
    tokens.push(PAD_TOKEN.to_owned());
    tokens.push(UNK_TOKEN.to_owned());
    tokens.extend(
        ranked
            .into_iter()
            .take(n.saturating_sub(2))
            .map(|(t, _)| t.to_owned()),
    );
    Ok(Vocabulary::from_tokens(tokens))
}

/// Initial embedding matrix `[|vocab| × se.dim]`: the PAD row is zero,
/// union-vocabulary rows copy their stacked vectors, everything else draws
/// uniformly from `[-0.25, 0.25]` with a seed-fixed generator.
pub fn init_embedding_matrix(vocab: &Vocabulary, se: &StackedEmbedding, seed: u64) -> Tensor {
    let dim = se.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(vocab.len() * dim);
    for (i, token) in vocab.tokens().iter().enumerate() {
        if i == PAD_ID {
            data.resize(data.len() + dim, 0.0);
        } else if se.in_union(token) {
            data.extend_from_slice(&se.lookup(token));
        } else {
            data.extend((0..dim).map(|_| rng.gen_range(-INIT_RANGE..=INIT_RANGE)));
        }
    }
    Tensor::from_vec(&[vocab.len(), dim], data).expect("matrix dims agree")
}

const CACHE_MAGIC: &[u8; 8] = b"SRCNEMB\0";
const CACHE_VERSION: u32 = 1;

/// Persist a filtered embedding table (little-endian: magic, version,
/// rows, cols, then per row a length-prefixed UTF-8 word, then the full
/// `f32` row-major matrix).
pub fn save_cache(path: &Path, emb: &PretrainedEmbedding) -> Result<(), EmbeddingError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(CACHE_MAGIC)?;
    out.write_all(&CACHE_VERSION.to_le_bytes())?;
    out.write_all(&(emb.len() as u32).to_le_bytes())?;
    out.write_all(&(emb.dim as u32).to_le_bytes())?;
    let mut rows: Vec<(&str, usize)> = emb.vocab.iter().map(|(w, &r)| (w.as_str(), r)).collect();
    rows.sort_by_key(|&(_, r)| r);
    for (word, _) in &rows {
        out.write_all(&(word.len() as u32).to_le_bytes())?;
        out.write_all(word.as_bytes())?;
    }
    for (_, row) in &rows {
        for v in &emb.matrix[row * emb.dim..(row + 1) * emb.dim] {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_cache(path: &Path) -> Result<PretrainedEmbedding, EmbeddingError> {
    let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(EmbeddingError::BadCache("magic bytes mismatch".into()));
    }
    let version = read_u32(&mut input)?;
    if version != CACHE_VERSION {
        return Err(EmbeddingError::BadCache(format!(
            "unsupported cache version {version}"
        )));
    }
    let rows = read_u32(&mut input)? as usize;
    let cols = read_u32(&mut input)? as usize;
    let mut words = Vec::with_capacity(rows);
    for _ in 0..rows {
        let len = read_u32(&mut input)? as usize;
        let mut buf = vec![0u8; len];
        input.read_exact(&mut buf)?;
        words.push(
            String::from_utf8(buf)
                .map_err(|_| EmbeddingError::BadCache("word is not UTF-8".into()))?,
        );
    }
    let mut emb = PretrainedEmbedding::new("cache", cols);
    let mut row = vec![0.0; cols];
    let mut b = [0u8; 4];
    for word in words {
        for v in &mut row {
            input.read_exact(&mut b)?;
            *v = f32::from_le_bytes(b) as f64;
        }
        emb.insert(&word, &row);
    }
    Ok(emb)
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32, EmbeddingError> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
