//! Reverse-mode differentiation tape.
//!
//! The tape records every operation in execution order; node inputs always
//! precede the node itself, so the backward pass is a single reverse sweep.
//! Only the operations the classifier needs are implemented.

use rand::Rng;

use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Dropout behaviour switch: training samples a keep mask, evaluation is the
/// identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op {
    Leaf,
    EmbeddingLookup {
        matrix: Var,
        ids: Vec<usize>,
        skip_grad_row: Option<usize>,
    },
    Conv1dNgram {
        input: Var,
        filters: Var,
        bias: Var,
        width: usize,
    },
    MaxOverTime {
        input: Var,
        rows: usize,
    },
    MeanOverTime {
        input: Var,
        mask: Vec<bool>,
    },
    Affine {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu {
        input: Var,
    },
    Dropout {
        input: Var,
        keep: Vec<bool>,
        scale: f64,
    },
    Concat {
        inputs: Vec<Var>,
    },
    StackRows {
        inputs: Vec<Var>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Operation recorder with per-node gradient accumulators.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Record an input value (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated for `v` by the last [`Tape::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }

    /// Row gather: `out[i] = matrix[ids[i]]`. The backward pass scatter-adds
    /// into the matrix rows; `skip_grad_row` (the padding row, when given)
    /// receives no gradient and therefore never trains away from its value.
    pub fn embedding_lookup(
        &mut self,
        matrix: Var,
        ids: &[usize],
        skip_grad_row: Option<usize>,
    ) -> Result<Var, TensorError> {
        let m = self.value(matrix);
        if m.rank() != 2 {
            return Err(TensorError::ShapeMismatch(format!(
                "embedding matrix must be rank 2, got shape {:?}",
                m.shape()
            )));
        }
        let (rows, cols) = (m.shape()[0], m.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::IndexOutOfRange {
                    index: id,
                    size: rows,
                    axis: "embedding row",
                });
            }
            out.extend_from_slice(m.row(id));
        }
        let value = Tensor::from_vec(&[ids.len(), cols], out)?;
        Ok(self.push(
            value,
            Op::EmbeddingLookup {
                matrix,
                ids: ids.to_vec(),
                skip_grad_row,
            },
        ))
    }

    /// N-gram convolution with fused ReLU.
    ///
    /// `input` is `[L, d]`, `filters` is `[F, width * d]` (each filter dotted
    /// with `width` consecutive rows flattened), `bias` is `[F]`; the output
    /// is `[L - width + 1, F]` after `max(., 0)`.
    pub fn conv1d_ngram(
        &mut self,
        input: Var,
        filters: Var,
        bias: Var,
        width: usize,
    ) -> Result<Var, TensorError> {
        let x = self.value(input);
        let w = self.value(filters);
        let b = self.value(bias);
        if x.rank() != 2 || w.rank() != 2 || b.rank() != 1 {
            return Err(TensorError::ShapeMismatch(format!(
                "conv1d_ngram expects input [L,d], filters [F,w*d], bias [F]; got {:?}/{:?}/{:?}",
                x.shape(),
                w.shape(),
                b.shape()
            )));
        }
        let (len, dim) = (x.shape()[0], x.shape()[1]);
        let (nf, fw) = (w.shape()[0], w.shape()[1]);
        if width == 0 || fw != width * dim || b.shape()[0] != nf {
            return Err(TensorError::ShapeMismatch(format!(
                "filters [{nf},{fw}]/bias {:?} incompatible with width {width} over dim {dim}",
                b.shape()
            )));
        }
        if len < width {
            return Err(TensorError::SequenceTooShort { len, width });
        }
        let steps = len - width + 1;
        let mut out = vec![0.0; steps * nf];
        for t in 0..steps {
            let window = &x.data()[t * dim..(t + width) * dim];
            for f in 0..nf {
                let filter = w.row(f);
                let mut acc = b.data()[f];
                for (fv, xv) in filter.iter().zip(window) {
                    acc += fv * xv;
                }
                out[t * nf + f] = acc.max(0.0);
            }
        }
        let value = Tensor::from_vec(&[steps, nf], out)?;
        Ok(self.push(
            value,
            Op::Conv1dNgram {
                input,
                filters,
                bias,
                width,
            },
        ))
    }

    /// Column-wise max over all time steps of a `[T, F]` tensor.
    pub fn max_over_time(&mut self, input: Var) -> Result<Var, TensorError> {
        let rows = self.require_rank2(input, "max_over_time")?.shape()[0];
        self.max_over_first_rows(input, rows)
    }

    /// Column-wise max over the first `rows` time steps only. Pooling over a
    /// prefix keeps the result independent of trailing padding. Ties resolve
    /// to the earliest row.
    pub fn max_over_first_rows(&mut self, input: Var, rows: usize) -> Result<Var, TensorError> {
        let x = self.require_rank2(input, "max_over_time")?;
        let (total, cols) = (x.shape()[0], x.shape()[1]);
        if total == 0 || rows == 0 {
            return Err(TensorError::EmptyTimeAxis);
        }
        if rows > total {
            return Err(TensorError::IndexOutOfRange {
                index: rows,
                size: total,
                axis: "pooled rows",
            });
        }
        let mut out = x.row(0).to_vec();
        for t in 1..rows {
            for (o, &v) in out.iter_mut().zip(x.row(t)) {
                if v > *o {
                    *o = v;
                }
            }
        }
        debug_assert_eq!(out.len(), cols);
        let value = Tensor::from_vec(&[cols], out)?;
        Ok(self.push(value, Op::MaxOverTime { input, rows }))
    }

    /// Mask-aware mean over time: rows with `mask[t] == false` (padding) are
    /// excluded and the divisor is the count of real rows.
    pub fn mean_over_time(&mut self, input: Var, mask: &[bool]) -> Result<Var, TensorError> {
        let x = self.require_rank2(input, "mean_over_time")?;
        let (rows, cols) = (x.shape()[0], x.shape()[1]);
        if rows == 0 {
            return Err(TensorError::EmptyTimeAxis);
        }
        if mask.len() != rows {
            return Err(TensorError::ShapeMismatch(format!(
                "mask length {} does not match {} time steps",
                mask.len(),
                rows
            )));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(TensorError::AllPadded);
        }
        let mut out = vec![0.0; cols];
        for (t, &keep) in mask.iter().enumerate() {
            if keep {
                for (o, &v) in out.iter_mut().zip(x.row(t)) {
                    *o += v;
                }
            }
        }
        for o in &mut out {
            *o /= count as f64;
        }
        let value = Tensor::from_vec(&[cols], out)?;
        Ok(self.push(
            value,
            Op::MeanOverTime {
                input,
                mask: mask.to_vec(),
            },
        ))
    }

    /// `out = W x + b` for a vector input.
    pub fn affine(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        if x.rank() != 1 || w.rank() != 2 || b.rank() != 1 {
            return Err(TensorError::ShapeMismatch(format!(
                "affine expects x [n], W [m,n], b [m]; got {:?}/{:?}/{:?}",
                x.shape(),
                w.shape(),
                b.shape()
            )));
        }
        let (m, n) = (w.shape()[0], w.shape()[1]);
        if x.shape()[0] != n || b.shape()[0] != m {
            return Err(TensorError::ShapeMismatch(format!(
                "affine dims: W [{m},{n}] with x {:?}, b {:?}",
                x.shape(),
                b.shape()
            )));
        }
        let mut out = b.data().to_vec();
        for (i, o) in out.iter_mut().enumerate() {
            let row = w.row(i);
            let mut acc = 0.0;
            for (wv, xv) in row.iter().zip(x.data()) {
                acc += wv * xv;
            }
            *o += acc;
        }
        let value = Tensor::from_vec(&[m], out)?;
        Ok(self.push(
            value,
            Op::Affine {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out: Vec<f64> = self.value(input).data().iter().map(|v| v.max(0.0)).collect();
        let shape = self.value(input).shape().to_vec();
        let value = Tensor::from_vec(&shape, out).expect("same shape");
        self.push(value, Op::Relu { input })
    }

    /// Inverted dropout. In [`Mode::Train`] each element is zeroed with
    /// probability `p` and survivors are scaled by `1 / (1 - p)`, so
    /// evaluation needs no rescaling and is the identity.
    pub fn dropout<R: Rng>(
        &mut self,
        input: Var,
        p: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidDropout(p));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(input);
        }
        let keep: Vec<bool> = (0..self.value(input).len())
            .map(|_| rng.gen::<f64>() >= p)
            .collect();
        self.dropout_with_mask(input, &keep, p)
    }

    /// Dropout with a caller-supplied keep mask (used by gradient checks,
    /// where the mask must stay fixed across re-evaluations).
    pub fn dropout_with_mask(
        &mut self,
        input: Var,
        keep: &[bool],
        p: f64,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidDropout(p));
        }
        let x = self.value(input);
        if keep.len() != x.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "dropout mask length {} vs input length {}",
                keep.len(),
                x.len()
            )));
        }
        let scale = 1.0 / (1.0 - p);
        let out: Vec<f64> = x
            .data()
            .iter()
            .zip(keep)
            .map(|(&v, &k)| if k { v * scale } else { 0.0 })
            .collect();
        let shape = x.shape().to_vec();
        let value = Tensor::from_vec(&shape, out)?;
        Ok(self.push(
            value,
            Op::Dropout {
                input,
                keep: keep.to_vec(),
                scale,
            },
        ))
    }

    /// Concatenate rank-1 tensors into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::ShapeMismatch("concat of zero parts".into()));
        }
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 1 {
                return Err(TensorError::ShapeMismatch(format!(
                    "concat expects rank-1 parts, got {:?}",
                    t.shape()
                )));
            }
            out.extend_from_slice(t.data());
        }
        let value = Tensor::from_vec(&[out.len()], out)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: parts.to_vec(),
            },
        ))
    }

    /// Stack equally sized rank-1 tensors into a `[B, C]` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var, TensorError> {
        if rows.is_empty() {
            return Err(TensorError::ShapeMismatch("stack of zero rows".into()));
        }
        let cols = self.value(rows[0]).len();
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            let t = self.value(r);
            if t.rank() != 1 || t.len() != cols {
                return Err(TensorError::ShapeMismatch(format!(
                    "stack_rows expects uniform [C] rows, got {:?}",
                    t.shape()
                )));
            }
            out.extend_from_slice(t.data());
        }
        let value = Tensor::from_vec(&[rows.len(), cols], out)?;
        Ok(self.push(
            value,
            Op::StackRows {
                inputs: rows.to_vec(),
            },
        ))
    }

    /// Numerically stable softmax + mean cross-entropy over a batch.
    ///
    /// Returns the scalar loss node and a copy of the `[B, C]` probabilities.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
    ) -> Result<(Var, Tensor), TensorError> {
        let l = self.require_rank2(logits, "softmax_cross_entropy")?;
        let (batch, classes) = (l.shape()[0], l.shape()[1]);
        if labels.len() != batch {
            return Err(TensorError::ShapeMismatch(format!(
                "{} labels for a batch of {}",
                labels.len(),
                batch
            )));
        }
        for &y in labels {
            if y >= classes {
                return Err(TensorError::LabelOutOfRange {
                    label: y,
                    classes,
                });
            }
        }
        let mut probs = vec![0.0; batch * classes];
        let mut loss = 0.0;
        for i in 0..batch {
            let row = l.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &v in row {
                denom += (v - max).exp();
            }
            let log_denom = denom.ln();
            for (c, &v) in row.iter().enumerate() {
                probs[i * classes + c] = ((v - max) - log_denom).exp();
            }
            loss -= (row[labels[i]] - max) - log_denom;
        }
        loss /= batch as f64;
        let probs = Tensor::from_vec(&[batch, classes], probs)?;
        let node = self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs: probs.clone(),
            },
        );
        Ok((node, probs))
    }

    /// Reverse sweep from a scalar `root`, accumulating gradients for every
    /// node that contributed to it. Construction order is already a
    /// topological order, so one reverse pass suffices.
    pub fn backward(&mut self, root: Var) -> Result<(), TensorError> {
        if self.value(root).len() != 1 {
            return Err(TensorError::ShapeMismatch(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        for g in &mut self.grads {
            *g = None;
        }
        let root_shape = self.value(root).shape().to_vec();
        self.grads[root.0] = Some(Tensor::from_vec(&root_shape, vec![1.0])?);

        for idx in (0..=root.0).rev() {
            let Some(grad_out) = self.grads[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    self.grads[idx] = Some(grad_out);
                    continue;
                }
                Op::EmbeddingLookup {
                    matrix,
                    ids,
                    skip_grad_row,
                } => {
                    let (matrix, ids, skip) = (*matrix, ids.clone(), *skip_grad_row);
                    let cols = self.value(matrix).shape()[1];
                    let acc = self.grad_slot(matrix);
                    for (i, &id) in ids.iter().enumerate() {
                        if Some(id) == skip {
                            continue;
                        }
                        let src = &grad_out.data()[i * cols..(i + 1) * cols];
                        let dst = &mut acc.data_mut()[id * cols..(id + 1) * cols];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                Op::Conv1dNgram {
                    input,
                    filters,
                    bias,
                    width,
                } => {
                    let (input, filters, bias, width) = (*input, *filters, *bias, *width);
                    let dim = self.value(input).shape()[1];
                    let nf = self.value(filters).shape()[0];
                    let steps = self.nodes[idx].value.shape()[0];
                    // Active positions: fused ReLU output is zero wherever the
                    // pre-activation was non-positive.
                    let active: Vec<bool> = self.nodes[idx]
                        .value
                        .data()
                        .iter()
                        .map(|&v| v > 0.0)
                        .collect();
                    let x = self.value(input).data().to_vec();
                    let w = self.value(filters).data().to_vec();
                    let fw = width * dim;

                    let mut dx = vec![0.0; x.len()];
                    let mut dw = vec![0.0; w.len()];
                    let mut db = vec![0.0; nf];
                    for t in 0..steps {
                        let window = &x[t * dim..(t + width) * dim];
                        for f in 0..nf {
                            if !active[t * nf + f] {
                                continue;
                            }
                            let g = grad_out.data()[t * nf + f];
                            if g == 0.0 {
                                continue;
                            }
                            db[f] += g;
                            let filter = &w[f * fw..(f + 1) * fw];
                            let dxw = &mut dx[t * dim..(t + width) * dim];
                            let dwf = &mut dw[f * fw..(f + 1) * fw];
                            for j in 0..fw {
                                dwf[j] += g * window[j];
                                dxw[j] += g * filter[j];
                            }
                        }
                    }
                    self.add_grad(input, &dx);
                    self.add_grad(filters, &dw);
                    self.add_grad(bias, &db);
                }
                Op::MaxOverTime { input, rows } => {
                    let (input, rows) = (*input, *rows);
                    let cols = self.value(input).shape()[1];
                    let x = self.value(input);
                    // First-argmax tie rule keeps backward deterministic.
                    let mut arg = vec![0usize; cols];
                    for (c, slot) in arg.iter_mut().enumerate() {
                        let mut best = x.row(0)[c];
                        for t in 1..rows {
                            let v = x.row(t)[c];
                            if v > best {
                                best = v;
                                *slot = t;
                            }
                        }
                    }
                    let acc = self.grad_slot(input);
                    for (c, &t) in arg.iter().enumerate() {
                        acc.data_mut()[t * cols + c] += grad_out.data()[c];
                    }
                }
                Op::MeanOverTime { input, mask } => {
                    let (input, mask) = (*input, mask.clone());
                    let cols = self.value(input).shape()[1];
                    let count = mask.iter().filter(|&&m| m).count() as f64;
                    let acc = self.grad_slot(input);
                    for (t, &keep) in mask.iter().enumerate() {
                        if keep {
                            let dst = &mut acc.data_mut()[t * cols..(t + 1) * cols];
                            for (d, g) in dst.iter_mut().zip(grad_out.data()) {
                                *d += g / count;
                            }
                        }
                    }
                }
                Op::Affine {
                    input,
                    weight,
                    bias,
                } => {
                    let (input, weight, bias) = (*input, *weight, *bias);
                    let x = self.value(input).data().to_vec();
                    let w = self.value(weight).data().to_vec();
                    let n = x.len();

                    let mut dx = vec![0.0; n];
                    let mut dw = vec![0.0; w.len()];
                    for (i, &g) in grad_out.data().iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let row = &w[i * n..(i + 1) * n];
                        let dwr = &mut dw[i * n..(i + 1) * n];
                        for j in 0..n {
                            dwr[j] += g * x[j];
                            dx[j] += g * row[j];
                        }
                    }
                    self.add_grad(input, &dx);
                    self.add_grad(weight, &dw);
                    self.add_grad(bias, grad_out.data());
                }
                Op::Relu { input } => {
                    let input = *input;
                    let active: Vec<f64> = self.nodes[idx]
                        .value
                        .data()
                        .iter()
                        .zip(grad_out.data())
                        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                        .collect();
                    self.add_grad(input, &active);
                }
                Op::Dropout { input, keep, scale } => {
                    let (input, scale) = (*input, *scale);
                    let dx: Vec<f64> = grad_out
                        .data()
                        .iter()
                        .zip(keep)
                        .map(|(&g, &k)| if k { g * scale } else { 0.0 })
                        .collect();
                    self.add_grad(input, &dx);
                }
                Op::Concat { inputs } => {
                    let inputs = inputs.clone();
                    let mut offset = 0;
                    for p in inputs {
                        let len = self.value(p).len();
                        let slice = grad_out.data()[offset..offset + len].to_vec();
                        self.add_grad(p, &slice);
                        offset += len;
                    }
                }
                Op::StackRows { inputs } => {
                    let inputs = inputs.clone();
                    let cols = self.value(inputs[0]).len();
                    for (i, r) in inputs.into_iter().enumerate() {
                        let slice = grad_out.data()[i * cols..(i + 1) * cols].to_vec();
                        self.add_grad(r, &slice);
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let (logits, labels, probs) = (*logits, labels.clone(), probs.clone());
                    let (batch, classes) = (probs.shape()[0], probs.shape()[1]);
                    let g = grad_out.item();
                    let mut dl = probs.data().to_vec();
                    for (i, &y) in labels.iter().enumerate() {
                        dl[i * classes + y] -= 1.0;
                    }
                    for v in &mut dl {
                        *v *= g / batch as f64;
                    }
                    self.add_grad(logits, &dl);
                }
            }
        }
        Ok(())
    }

    fn require_rank2(&self, v: Var, op: &str) -> Result<&Tensor, TensorError> {
        let t = self.value(v);
        if t.rank() != 2 {
            return Err(TensorError::ShapeMismatch(format!(
                "{op} expects a rank-2 tensor, got shape {:?}",
                t.shape()
            )));
        }
        Ok(t)
    }

    fn grad_slot(&mut self, v: Var) -> &mut Tensor {
        let shape = self.nodes[v.0].value.shape().to_vec();
        self.grads[v.0].get_or_insert_with(|| Tensor::zeros(&shape))
    }

    fn add_grad(&mut self, v: Var, delta: &[f64]) {
        let acc = self.grad_slot(v);
        debug_assert_eq!(acc.len(), delta.len());
        for (a, d) in acc.data_mut().iter_mut().zip(delta) {
            *a += d;
        }
    }
}
