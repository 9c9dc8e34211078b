//! Helpers shared by the integration suites: finite-difference drivers for
//! every tape op, a loop-based forward reimplementation kept deliberately
//! independent of the tape, and the small configs the suites train with.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sercnn::autodiff::{check_gradients, GradCheckReport, Tape, Var};
use sercnn::corpus::ConcatOptions;
use sercnn::harness::{ExperimentConfig, TrainConfig};
use sercnn::{SercnnConfig, SercnnModel, Tensor, TensorError, WindowSpec};

pub const GRAD_TOL: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;

pub fn tiny_config() -> SercnnConfig {
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

/// Small-but-trainable setup for the synthetic experiments. Training
/// hyperparameters that the reference protocol pins (learning rate,
/// dropout, widths) keep their values; capacity and schedule shrink so a
/// run finishes in seconds.
pub fn desk_experiment(window: WindowSpec, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        window,
        model: SercnnConfig {
            vocab_size: 2000,
            embed_dim: 24,
            filter_widths: vec![1, 2, 3],
            filters_per_width: 12,
            hidden_dim: 24,
            num_classes: 2,
            dropout_p: 0.5,
        },
        train: TrainConfig {
            learning_rate: 1e-3,
            batch_size: 20,
            max_epochs: 14,
            patience: 4,
            freeze_embeddings: false,
        },
        concat: ConcatOptions::default(),
        folds: 5,
        seed,
        parallel_folds: false,
        cache_dir: None,
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], half_range: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-half_range..half_range)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Values with magnitude in [0.1, 1.0]: keeps ReLU inputs away from the
/// kink so central differences stay two-sided on one linear piece.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            sign * rng.gen_range(0.1..1.0)
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Scalar head: one softmax row over a rank-1 vector of length ≥ 2.
fn xent_head(tape: &mut Tape, v: Var, label: usize) -> Result<Var, TensorError> {
    let row = tape.stack_rows(&[v])?;
    let (loss, _) = tape.softmax_cross_entropy(row, &[label])?;
    Ok(loss)
}

pub fn grad_embedding_lookup(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = rng.gen_range(4..8usize);
    let dim = rng.gen_range(2..5usize);
    let len = rng.gen_range(1..7usize);
    // Repeats are likely at this vocabulary size; they exercise gradient
    // accumulation into a shared row.
    let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
    let label = rng.gen_range(0..dim);
    let matrix = uniform(&mut rng, &[vocab, dim], 1.0);
    let mask = vec![true; len];
    check_gradients(&[matrix], FD_STEP, |tape, vars| {
        let rows = tape.embedding_lookup(vars[0], &ids, None)?;
        let mean = tape.mean_over_time(rows, &mask)?;
        xent_head(tape, mean, label)
    })
    .unwrap()
}

pub fn grad_embedding_skip_row(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = rng.gen_range(4..8usize);
    let dim = rng.gen_range(2..5usize);
    let len = rng.gen_range(1..7usize);
    // Row 0 is never referenced, so its analytic gradient (zero, by the
    // skip) must agree with the finite difference (zero, by non-use).
    let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(1..vocab)).collect();
    let label = rng.gen_range(0..dim);
    let matrix = uniform(&mut rng, &[vocab, dim], 1.0);
    let mask = vec![true; len];
    check_gradients(&[matrix], FD_STEP, |tape, vars| {
        let rows = tape.embedding_lookup(vars[0], &ids, Some(0))?;
        let mean = tape.mean_over_time(rows, &mask)?;
        xent_head(tape, mean, label)
    })
    .unwrap()
}

fn grad_conv(seed: u64, width: usize) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.gen_range(2..4usize);
    let nf = rng.gen_range(2..4usize);
    let len = width + rng.gen_range(0..5usize);
    let label = rng.gen_range(0..nf);
    let input = uniform(&mut rng, &[len, dim], 1.0);
    let filters = uniform(&mut rng, &[nf, width * dim], 1.0);
    let bias = uniform(&mut rng, &[nf], 0.5);
    let steps = len - width + 1;
    let mask = vec![true; steps];
    check_gradients(&[input, filters, bias], FD_STEP, |tape, vars| {
        let maps = tape.conv1d_ngram(vars[0], vars[1], vars[2], width)?;
        let mean = tape.mean_over_time(maps, &mask)?;
        xent_head(tape, mean, label)
    })
    .unwrap()
}

pub fn grad_conv_w1(seed: u64) -> GradCheckReport {
    grad_conv(seed, 1)
}

pub fn grad_conv_w2(seed: u64) -> GradCheckReport {
    grad_conv(seed, 2)
}

pub fn grad_conv_w3(seed: u64) -> GradCheckReport {
    grad_conv(seed, 3)
}

pub fn grad_max_over_rows(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rng.gen_range(2..6usize);
    let cols = rng.gen_range(2..5usize);
    let pool = rng.gen_range(1..=rows);
    let label = rng.gen_range(0..cols);
    let input = uniform(&mut rng, &[rows, cols], 1.0);
    check_gradients(&[input], FD_STEP, |tape, vars| {
        let pooled = tape.max_over_first_rows(vars[0], pool)?;
        xent_head(tape, pooled, label)
    })
    .unwrap()
}

pub fn grad_mean_over_time(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rng.gen_range(2..6usize);
    let cols = rng.gen_range(2..5usize);
    let label = rng.gen_range(0..cols);
    let mut mask: Vec<bool> = (0..rows).map(|_| rng.gen::<bool>()).collect();
    mask[rng.gen_range(0..rows)] = true;
    let input = uniform(&mut rng, &[rows, cols], 1.0);
    check_gradients(&[input], FD_STEP, |tape, vars| {
        let mean = tape.mean_over_time(vars[0], &mask)?;
        xent_head(tape, mean, label)
    })
    .unwrap()
}

pub fn grad_affine(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..6usize);
    let m = rng.gen_range(2..5usize);
    let label = rng.gen_range(0..m);
    let x = uniform(&mut rng, &[n], 1.0);
    let w = uniform(&mut rng, &[m, n], 1.0);
    let b = uniform(&mut rng, &[m], 0.5);
    check_gradients(&[x, w, b], FD_STEP, |tape, vars| {
        let out = tape.affine(vars[0], vars[1], vars[2])?;
        xent_head(tape, out, label)
    })
    .unwrap()
}

pub fn grad_relu(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..7usize);
    let label = rng.gen_range(0..n);
    let x = away_from_zero(&mut rng, &[n]);
    check_gradients(&[x], FD_STEP, |tape, vars| {
        let out = tape.relu(vars[0]);
        xent_head(tape, out, label)
    })
    .unwrap()
}

pub fn grad_dropout(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..7usize);
    let label = rng.gen_range(0..n);
    let mut keep: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
    keep[rng.gen_range(0..n)] = true;
    let x = uniform(&mut rng, &[n], 1.0);
    check_gradients(&[x], FD_STEP, |tape, vars| {
        let out = tape.dropout_with_mask(vars[0], &keep, 0.5)?;
        xent_head(tape, out, label)
    })
    .unwrap()
}

pub fn grad_concat(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pieces = rng.gen_range(2..5usize);
    let lens: Vec<usize> = (0..pieces).map(|_| rng.gen_range(1..4usize)).collect();
    let total: usize = lens.iter().sum();
    let label = rng.gen_range(0..total);
    let params: Vec<Tensor> = lens.iter().map(|&l| uniform(&mut rng, &[l], 1.0)).collect();
    check_gradients(&params, FD_STEP, |tape, vars| {
        let joined = tape.concat(vars)?;
        xent_head(tape, joined, label)
    })
    .unwrap()
}

pub fn grad_stack_rows(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = rng.gen_range(2..5usize);
    let classes = rng.gen_range(2..4usize);
    let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
    let params: Vec<Tensor> = (0..batch)
        .map(|_| uniform(&mut rng, &[classes], 1.0))
        .collect();
    check_gradients(&params, FD_STEP, |tape, vars| {
        let logits = tape.stack_rows(vars)?;
        let (loss, _) = tape.softmax_cross_entropy(logits, &labels)?;
        Ok(loss)
    })
    .unwrap()
}

pub fn grad_softmax_cross_entropy(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = rng.gen_range(1..5usize);
    let classes = rng.gen_range(2..5usize);
    let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
    let logits = uniform(&mut rng, &[batch, classes], 2.0);
    check_gradients(&[logits], FD_STEP, |tape, vars| {
        let (loss, _) = tape.softmax_cross_entropy(vars[0], &labels)?;
        Ok(loss)
    })
    .unwrap()
}

/// Whole-model graph at toy width: lookup, three conv banks, prefix max
/// pooling, masked mean, concat, fixed-mask dropout, two affine layers,
/// softmax loss. Parameters enter in the model's canonical order.
pub fn grad_end_to_end(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (vocab, dim, nf, hidden, classes) = (8usize, 4usize, 2usize, 3usize, 2usize);
    let widths = [1usize, 2, 3];
    let len = rng.gen_range(3..9usize);
    let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(1..vocab)).collect();
    let mask = vec![true; len];
    let label = rng.gen_range(0..classes);
    let combined_dim = widths.len() * nf + dim;
    let keep: Vec<bool> = {
        let mut k: Vec<bool> = (0..combined_dim).map(|_| rng.gen::<bool>()).collect();
        k[rng.gen_range(0..combined_dim)] = true;
        k
    };

    let mut params = vec![uniform(&mut rng, &[vocab, dim], 1.0)];
    for &w in &widths {
        params.push(uniform(&mut rng, &[nf, w * dim], 1.0));
        params.push(uniform(&mut rng, &[nf], 0.5));
    }
    params.push(uniform(&mut rng, &[hidden, combined_dim], 1.0));
    params.push(uniform(&mut rng, &[hidden], 0.5));
    params.push(uniform(&mut rng, &[classes, hidden], 1.0));
    params.push(uniform(&mut rng, &[classes], 0.5));

    check_gradients(&params, FD_STEP, |tape, vars| {
        let embedded = tape.embedding_lookup(vars[0], &ids, Some(0))?;
        let mut contexts = Vec::new();
        for (i, &w) in widths.iter().enumerate() {
            let maps = tape.conv1d_ngram(embedded, vars[1 + 2 * i], vars[2 + 2 * i], w)?;
            let pool = len.saturating_sub(w - 1).max(1);
            contexts.push(tape.max_over_first_rows(maps, pool)?);
        }
        contexts.push(tape.mean_over_time(embedded, &mask)?);
        let combined = tape.concat(&contexts)?;
        let dropped = tape.dropout_with_mask(combined, &keep, 0.5)?;
        let hidden_v = tape.affine(dropped, vars[7], vars[8])?;
        let hidden_v = tape.relu(hidden_v);
        let logits = tape.affine(hidden_v, vars[9], vars[10])?;
        xent_head(tape, logits, label)
    })
    .unwrap()
}

pub type GradDriver = fn(u64) -> GradCheckReport;

/// Every op driver, named for reporting. Seeds are offset per op so no two
/// ops see identical instance streams.
pub fn gradient_suite() -> Vec<(&'static str, GradDriver)> {
    vec![
        ("embedding_lookup", grad_embedding_lookup),
        ("embedding_lookup(skip_row)", grad_embedding_skip_row),
        ("conv1d_ngram(w=1)", grad_conv_w1),
        ("conv1d_ngram(w=2)", grad_conv_w2),
        ("conv1d_ngram(w=3)", grad_conv_w3),
        ("max_over_first_rows", grad_max_over_rows),
        ("mean_over_time", grad_mean_over_time),
        ("affine", grad_affine),
        ("relu", grad_relu),
        ("dropout", grad_dropout),
        ("concat", grad_concat),
        ("stack_rows", grad_stack_rows),
        ("softmax_cross_entropy", grad_softmax_cross_entropy),
        ("end_to_end", grad_end_to_end),
    ]
}

/// Forward pass rebuilt from the checkpoint tensors with plain loops, no
/// tape. Loop nests are ordered differently from the recorded ops on
/// purpose; agreement is therefore structural, not shared code.
#[allow(clippy::needless_range_loop)]
pub fn oracle_probs(model: &SercnnModel, ids: &[usize]) -> Vec<f64> {
    let named = model.to_named();
    let cfg = model.config();
    let emb = named.get("embedding").expect("embedding tensor");
    let dim = cfg.embed_dim;

    let min_len = cfg.filter_widths.iter().copied().max().unwrap_or(1);
    let mut padded: Vec<usize> = ids.to_vec();
    while padded.len() < min_len {
        padded.push(0);
    }
    let real_len = padded.iter().filter(|&&id| id != 0).count();

    let rows: Vec<&[f64]> = padded.iter().map(|&id| emb.row(id)).collect();

    let mut combined = Vec::new();
    for &w in &cfg.filter_widths {
        let filters = named
            .get(&format!("conv_w{w}_filters"))
            .expect("conv filters");
        let bias = named.get(&format!("conv_w{w}_bias")).expect("conv bias");
        let pool = real_len.saturating_sub(w - 1).max(1);
        for f in 0..cfg.filters_per_width {
            let weights = filters.row(f);
            let mut best = f64::NEG_INFINITY;
            for t in 0..pool {
                let mut acc = bias.data()[f];
                for k in 0..w {
                    for j in 0..dim {
                        acc += weights[k * dim + j] * rows[t + k][j];
                    }
                }
                let activated = if acc > 0.0 { acc } else { 0.0 };
                if activated > best {
                    best = activated;
                }
            }
            combined.push(best);
        }
    }
    for j in 0..dim {
        let mut sum = 0.0;
        for (t, &id) in padded.iter().enumerate() {
            if id != 0 {
                sum += rows[t][j];
            }
        }
        combined.push(sum / real_len as f64);
    }

    let fc1_w = named.get("fc1_weight").expect("fc1 weight");
    let fc1_b = named.get("fc1_bias").expect("fc1 bias");
    let mut hidden = vec![0.0; cfg.hidden_dim];
    for (i, h) in hidden.iter_mut().enumerate() {
        let mut acc = fc1_b.data()[i];
        for (j, &x) in combined.iter().enumerate() {
            acc += fc1_w.row(i)[j] * x;
        }
        *h = acc.max(0.0);
    }

    let fc2_w = named.get("fc2_weight").expect("fc2 weight");
    let fc2_b = named.get("fc2_bias").expect("fc2 bias");
    let mut logits = vec![0.0; cfg.num_classes];
    for (i, l) in logits.iter_mut().enumerate() {
        let mut acc = fc2_b.data()[i];
        for (j, &h) in hidden.iter().enumerate() {
            acc += fc2_w.row(i)[j] * h;
        }
        *l = acc;
    }

    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

/// Random token ids avoiding the padding id, so padding stays trailing.
pub fn random_ids(rng: &mut ChaCha8Rng, max_len: usize, vocab: usize) -> Vec<usize> {
    let len = rng.gen_range(1..=max_len);
    (0..len).map(|_| rng.gen_range(1..vocab)).collect()
}
