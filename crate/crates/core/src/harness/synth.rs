//! Synthetic corpus with a planted lexical signal.
//!
//! Two disjoint signal lexicons (one per class) are mixed into a shared
//! Zipf-weighted background vocabulary. `signal_strength` scales the chance
//! that a token is drawn from the user's class lexicon, from 0 (classes
//! statistically identical) to 1 (every ~4th token is class-revealing).
//! The signal is planted uniformly over time, so earliest- and latest-window
//! experiments should score alike. Depressed users also get one anchor post
//! at a random position, mirroring ingestion-time self-declarations.

use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::corpus::{Post, UserRecord};

const BACKGROUND_WORDS: usize = 600;
const SIGNAL_WORDS_PER_CLASS: usize = 30;
const POST_TOKENS: RangeInclusive<usize> = 6..=12;
/// Chance that a token is a signal token at `signal_strength` 1.
const MAX_SIGNAL_RATE: f64 = 0.25;

/// Zipf-weighted sampler over the background vocabulary.
struct Background {
    cumulative: Vec<f64>,
}

impl Background {
    fn new() -> Self {
        let mut cumulative = Vec::with_capacity(BACKGROUND_WORDS);
        let mut acc = 0.0;
        for i in 0..BACKGROUND_WORDS {
            acc += 1.0 / (i + 1) as f64;
            cumulative.push(acc);
        }
        Background { cumulative }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> String {
        let total = *self.cumulative.last().expect("non-empty vocabulary");
        let u = rng.gen_range(0.0..total);
        let idx = self.cumulative.partition_point(|&c| c <= u);
        format!("bg{idx:03}")
    }
}

fn signal_token(class: u8, rng: &mut ChaCha8Rng) -> String {
    let idx = rng.gen_range(0..SIGNAL_WORDS_PER_CLASS);
    format!("sig{class}x{idx:02}")
}

/// Generate `n_users` labeled users (alternating control/depressed, so the
/// classes are exactly balanced) with post counts drawn from
/// `posts_per_user`. Bit-identical output for equal arguments.
pub fn generate_synthetic_corpus(
    n_users: usize,
    posts_per_user: RangeInclusive<usize>,
    signal_strength: f64,
    seed: u64,
) -> Result<Vec<UserRecord>, HarnessError> {
    if n_users < 2 || !n_users.is_multiple_of(2) {
        return Err(HarnessError::InvalidRange(format!(
            "n_users must be even and ≥ 2, got {n_users}"
        )));
    }
    if posts_per_user.is_empty() || *posts_per_user.start() == 0 {
        return Err(HarnessError::InvalidRange(format!(
            "posts_per_user {posts_per_user:?} must be a non-empty range of positive counts"
        )));
    }
    if !(0.0..=1.0).contains(&signal_strength) {
        return Err(HarnessError::InvalidRange(format!(
            "signal_strength {signal_strength} outside [0, 1]"
        )));
    }

    let background = Background::new();
    let signal_rate = MAX_SIGNAL_RATE * signal_strength;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut users = Vec::with_capacity(n_users);
    for u in 0..n_users {
        let label = (u % 2) as u8;
        let n_posts = rng.gen_range(posts_per_user.clone());
        let mut posts: Vec<Post> = (0..n_posts)
            .map(|_| {
                let len = rng.gen_range(POST_TOKENS);
                let tokens: Vec<String> = (0..len)
                    .map(|_| {
                        if rng.gen::<f64>() < signal_rate {
                            signal_token(label, &mut rng)
                        } else {
                            background.sample(&mut rng)
                        }
                    })
                    .collect();
                Post {
                    text: tokens.join(" "),
                    timestamp: 0,
                    is_anchor: false,
                }
            })
            .collect();
        if label == 1 {
            let at = rng.gen_range(0..=posts.len());
            posts.insert(
                at,
                Post {
                    text: "declared diagnosis today".into(),
                    timestamp: 0,
                    is_anchor: true,
                },
            );
        }
        for (i, post) in posts.iter_mut().enumerate() {
            post.timestamp = i as i64;
        }
        users.push(UserRecord {
            user_id: format!("user{u:05}"),
            label,
            posts,
        });
    }
    Ok(users)
}
