//! Finite-difference verification of every tape op and the whole model
//! graph: 20 random instances per op, relative error within 1e-4.

mod common;

use common::{GRAD_TOL, gradient_suite};
use sercnn::autodiff::GradCheckReport;

fn run_twenty(name: &str, f: fn(u64) -> GradCheckReport, base_seed: u64) {
    for i in 0..20 {
        let report = f(base_seed + i);
        assert!(
            report.passes(GRAD_TOL),
            "{name} instance {i}: max rel err {:.3e} at {:?} over {} elements",
            report.max_rel_err,
            report.worst,
            report.checked
        );
        assert!(report.checked > 0, "{name} instance {i} checked nothing");
    }
}

#[test]
fn embedding_lookup_gradients() {
    run_twenty("embedding_lookup", common::grad_embedding_lookup, 100);
}

#[test]
fn embedding_lookup_skip_row_gradients() {
    run_twenty("embedding_lookup(skip_row)", common::grad_embedding_skip_row, 200);
}

#[test]
fn conv_width_one_gradients() {
    run_twenty("conv1d_ngram(w=1)", common::grad_conv_w1, 300);
}

#[test]
fn conv_width_two_gradients() {
    run_twenty("conv1d_ngram(w=2)", common::grad_conv_w2, 400);
}

#[test]
fn conv_width_three_gradients() {
    run_twenty("conv1d_ngram(w=3)", common::grad_conv_w3, 500);
}

#[test]
fn max_over_first_rows_gradients() {
    run_twenty("max_over_first_rows", common::grad_max_over_rows, 600);
}

#[test]
fn mean_over_time_gradients() {
    run_twenty("mean_over_time", common::grad_mean_over_time, 700);
}

#[test]
fn affine_gradients() {
    run_twenty("affine", common::grad_affine, 800);
}

#[test]
fn relu_gradients() {
    run_twenty("relu", common::grad_relu, 900);
}

#[test]
fn dropout_gradients() {
    run_twenty("dropout", common::grad_dropout, 1000);
}

#[test]
fn concat_gradients() {
    run_twenty("concat", common::grad_concat, 1100);
}

#[test]
fn stack_rows_gradients() {
    run_twenty("stack_rows", common::grad_stack_rows, 1200);
}

#[test]
fn softmax_cross_entropy_gradients() {
    run_twenty("softmax_cross_entropy", common::grad_softmax_cross_entropy, 1300);
}

#[test]
fn end_to_end_graph_gradients() {
    run_twenty("end_to_end", common::grad_end_to_end, 1400);
}

#[test]
fn suite_covers_every_op() {
    let names: Vec<&str> = gradient_suite().iter().map(|(n, _)| *n).collect();
    for expected in [
        "embedding_lookup",
        "conv1d_ngram(w=1)",
        "conv1d_ngram(w=2)",
        "conv1d_ngram(w=3)",
        "max_over_first_rows",
        "mean_over_time",
        "affine",
        "relu",
        "dropout",
        "concat",
        "stack_rows",
        "softmax_cross_entropy",
        "end_to_end",
    ] {
        assert!(names.contains(&expected), "suite is missing {expected}");
    }
}
