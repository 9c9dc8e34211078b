//! Post ingestion, preprocessing, observation windows, and dataset stats.
//!
//! Input format is JSONL: one user per line, fields `user_id`, `label`
//! (0 = control, 1 = depressed), `posts` = `[{text, timestamp, is_anchor}]`.
//! Post text is preprocessed on ingestion (lowercase, URL removal, whitespace
//! normalization) and empty posts are dropped there, so everything downstream
//! sees clean non-empty posts ordered by timestamp.

use std::io::BufRead;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("user {user_id}: every post is an anchor post")]
    AllPostsRemoved { user_id: String },
    #[error("user {user_id}: no posts to window")]
    EmptyHistory { user_id: String },
    #[error("observation window must cover at least one post")]
    InvalidWindow,
    #[error("dataset contains no users")]
    EmptyDataset,
    #[error("line {line}: label {label} is not 0 or 1")]
    BadLabel { line: usize, label: i64 },
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub text: String,
    /// Seconds since epoch; used only for chronological ordering.
    pub timestamp: i64,
    /// Marks the ground-truth self-declaration post.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub is_anchor: bool,
}

/// One labeled user. `posts` are non-decreasing by timestamp; the loader and
/// the synthetic generator both guarantee it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub label: u8,
    pub posts: Vec<Post>,
}

/// Fixed observation window over a post history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowSpec {
    /// First `k` posts of the history.
    Earliest(usize),
    /// Last `k` posts of the history.
    Latest(usize),
    /// The entire history.
    Full,
}

impl WindowSpec {
    /// Short label used in reports: `E10`, `L30`, `full`.
    pub fn label(&self) -> String {
        match self {
            WindowSpec::Earliest(k) => format!("E{k}"),
            WindowSpec::Latest(k) => format!("L{k}"),
            WindowSpec::Full => "full".to_string(),
        }
    }
}

impl std::fmt::Display for WindowSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// A user's windowed history flattened to one token sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub source_user: String,
    pub label: u8,
    pub tokens: Vec<String>,
}

/// How posts are flattened into a document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcatOptions {
    /// Optional separator token inserted between consecutive posts.
    pub separator: Option<String>,
    /// Hard cap on document length; the tail is truncated.
    pub max_tokens: usize,
}

impl Default for ConcatOptions {
    fn default() -> Self {
        ConcatOptions {
            separator: None,
            max_tokens: 3000,
        }
    }
}

fn url_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // Input is lowercased before matching, so the pattern only needs
    // lowercase forms: scheme://… or a www.-prefixed token.
    RE.get_or_init(|| Regex::new(r"[a-z][a-z0-9+.\-]*://\S+|\bwww\.\S+").expect("static pattern"))
}

/// Lowercase, strip URLs, collapse whitespace runs to single spaces.
/// Total and idempotent; may return an empty string.
pub fn preprocess_post(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let stripped = url_pattern().replace_all(&lowered, " ");
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whitespace tokenization of already-preprocessed text.
pub fn tokenize(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

/// Remove every anchor (self-declaration) post, preserving order.
pub fn drop_anchor_posts(user: &UserRecord) -> Result<UserRecord, CorpusError> {
    let posts: Vec<Post> = user.posts.iter().filter(|p| !p.is_anchor).cloned().collect();
    if posts.is_empty() {
        return Err(CorpusError::AllPostsRemoved {
            user_id: user.user_id.clone(),
        });
    }
    Ok(UserRecord {
        user_id: user.user_id.clone(),
        label: user.label,
        posts,
    })
}

/// Slice a user's history down to the observation window. `Earliest` takes
/// the first `min(k, n)` posts, `Latest` the last `min(k, n)`; with `n ≤ k`
/// both return the whole history.
pub fn select_window(user: &UserRecord, spec: WindowSpec) -> Result<&[Post], CorpusError> {
    let n = user.posts.len();
    if n == 0 {
        return Err(CorpusError::EmptyHistory {
            user_id: user.user_id.clone(),
        });
    }
    match spec {
        WindowSpec::Earliest(0) | WindowSpec::Latest(0) => Err(CorpusError::InvalidWindow),
        WindowSpec::Earliest(k) => Ok(&user.posts[..k.min(n)]),
        WindowSpec::Latest(k) => Ok(&user.posts[n - k.min(n)..]),
        WindowSpec::Full => Ok(&user.posts),
    }
}

/// Flatten windowed posts into one token stream, chronological order, with an
/// optional separator between posts and a hard length cap.
pub fn concat_posts(posts: &[Post], opts: &ConcatOptions) -> Vec<String> {
    let mut tokens = Vec::new();
    for (i, post) in posts.iter().enumerate() {
        if i > 0 {
            if let Some(sep) = &opts.separator {
                tokens.push(sep.clone());
            }
        }
        tokens.extend(tokenize(&post.text).map(str::to_owned));
        if tokens.len() >= opts.max_tokens {
            tokens.truncate(opts.max_tokens);
            break;
        }
    }
    tokens
}

/// Full per-user pipeline: drop anchors, apply the window, flatten.
pub fn build_document(
    user: &UserRecord,
    spec: WindowSpec,
    opts: &ConcatOptions,
) -> Result<Document, CorpusError> {
    let cleaned = drop_anchor_posts(user)?;
    let window = select_window(&cleaned, spec)?;
    Ok(Document {
        source_user: user.user_id.clone(),
        label: user.label,
        tokens: concat_posts(window, opts),
    })
}

/// Post-count distribution over users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count_users: usize,
    pub count_posts: usize,
    pub count_depressed: usize,
    pub count_control: usize,
    pub mean_posts: f64,
    pub min: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub iqr: f64,
    pub max: usize,
}

/// Median of an ascending slice (mean of the two central values when even).
fn median_sorted(sorted: &[usize]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    }
}

/// Quartiles use the exclusive-median convention: the halves fed to Q1/Q3
/// never include the overall median element when the count is odd.
pub fn corpus_stats(dataset: &[UserRecord]) -> Result<CorpusStats, CorpusError> {
    if dataset.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    let mut counts: Vec<usize> = dataset.iter().map(|u| u.posts.len()).collect();
    counts.sort_unstable();
    let n = counts.len();
    let total: usize = counts.iter().sum();
    let lower = &counts[..n / 2];
    let upper = &counts[n.div_ceil(2)..];
    let (q1, q3) = if lower.is_empty() {
        // Single user: all quartiles collapse onto the one value.
        (counts[0] as f64, counts[0] as f64)
    } else {
        (median_sorted(lower), median_sorted(upper))
    };
    Ok(CorpusStats {
        count_users: n,
        count_posts: total,
        count_depressed: dataset.iter().filter(|u| u.label == 1).count(),
        count_control: dataset.iter().filter(|u| u.label == 0).count(),
        mean_posts: total as f64 / n as f64,
        min: counts[0],
        q1,
        median: median_sorted(&counts),
        q3,
        iqr: q3 - q1,
        max: counts[n - 1],
    })
}

#[derive(Deserialize)]
struct RawUser {
    user_id: String,
    label: i64,
    posts: Vec<Post>,
}

/// Read a JSONL corpus. Per user: texts are preprocessed, posts that end up
/// empty are dropped, the rest are sorted by timestamp. Users with no posts
/// left are skipped with a warning rather than failing the whole load.
pub fn load_jsonl(path: &Path) -> Result<Vec<UserRecord>, CorpusError> {
    let file = std::fs::File::open(path)?;
    load_jsonl_reader(std::io::BufReader::new(file))
}

pub fn load_jsonl_reader<R: BufRead>(reader: R) -> Result<Vec<UserRecord>, CorpusError> {
    let mut users = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawUser =
            serde_json::from_str(&line).map_err(|source| CorpusError::Json { line: i + 1, source })?;
        if !(raw.label == 0 || raw.label == 1) {
            return Err(CorpusError::BadLabel {
                line: i + 1,
                label: raw.label,
            });
        }
        let mut posts: Vec<Post> = raw
            .posts
            .into_iter()
            .filter_map(|p| {
                let text = preprocess_post(&p.text);
                (!text.is_empty()).then_some(Post { text, ..p })
            })
            .collect();
        posts.sort_by_key(|p| p.timestamp);
        if posts.is_empty() {
            log::warn!("user {}: no posts survive preprocessing, skipped", raw.user_id);
            continue;
        }
        users.push(UserRecord {
            user_id: raw.user_id,
            label: raw.label as u8,
            posts,
        });
    }
    if users.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    Ok(users)
}

/// Write users back out as JSONL (inverse of [`load_jsonl`] for clean data).
pub fn save_jsonl(path: &Path, users: &[UserRecord]) -> Result<(), CorpusError> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for user in users {
        let line = serde_json::to_string(user).expect("user records serialize");
        writeln!(out, "{line}")?;
    }
    Ok(())
}
