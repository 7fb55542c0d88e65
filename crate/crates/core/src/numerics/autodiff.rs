//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every op appends a node to the [`Tape`] holding its forward value and a
//! record of its inputs. [`Tape::backward`] walks the nodes in reverse
//! execution order exactly once, accumulating gradients additively, so a
//! value used on several paths receives the sum of the path gradients.
//!
//! Parameters can be registered by reference ([`Tape::param`]); the tape
//! borrows them for its lifetime instead of copying.

use std::borrow::Cow;

use crate::ctc;
use crate::error::{Error, Result};
use crate::numerics::tensor::{self, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-column statistics measured by a training-mode batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Ln(Var),
    Softmax(Var),
    LogSoftmax(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Transpose(Var),
    Sum(Var),
    Pick(Var, Vec<(usize, usize)>),
    Conv1d(Var, Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Ctc {
        logits: Var,
        grad: Tensor,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of a scalar loss with respect to every leaf that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn shape2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers an owned tensor as a leaf.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Owned leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Borrowed leaf; `requires_grad` decides whether gradients flow to it.
    pub fn leaf_ref(&mut self, value: &'a Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Borrowed trainable parameter.
    pub fn param(&mut self, value: &'a Tensor) -> Var {
        self.leaf_ref(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((n, k), (k2, m)) = (shape2(ta), shape2(tb));
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul of {:?} and {:?}: inner dimensions differ",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut out = vec![0.0; n * m];
        tensor::matmul_into(ta.data(), tb.data(), &mut out, n, k, m);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::MatMul(a, b), rg))
    }

    /// Adds a `1 × d` row to every row of an `n × d` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        let d = tx.cols();
        if tr.numel() != d {
            return Err(Error::Dimension(format!(
                "cannot broadcast {:?} over rows of {:?}",
                tr.shape(),
                tx.shape()
            )));
        }
        let mut out = tx.data().to_vec();
        for chunk in out.chunks_mut(d) {
            for (o, b) in chunk.iter_mut().zip(tr.data()) {
                *o += b;
            }
        }
        let shape = vec![tx.rows(), d];
        let rg = self.rg(&[x, row]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddRow(x, row), rg))
    }

    /// Affine map `x·W + b` for `x: n×d_in`, `W: d_in×d_out`, `b: 1×d_out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<Vec<usize>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if shape2(ta) != shape2(tb) {
            return Err(Error::Dimension(format!(
                "{what} of {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        Ok(vec![ta.rows(), ta.cols()])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "elementwise product")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::from_parts(vec![t.rows(), t.cols()], t.data().iter().map(|v| v * c).collect());
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let out = Tensor::from_parts(vec![t.rows(), t.cols()], t.data().iter().map(|&v| f(v)).collect());
        let rg = self.rg(&[a]);
        self.push(out, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// Natural logarithm; inputs must be positive.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        if let Some(v) = self.value(a).data().iter().find(|&&v| v.is_nan() || v <= 0.0) {
            return Err(Error::NonFinite(format!("ln of {v}")));
        }
        Ok(self.unary(a, f64::ln, Op::Ln(a)))
    }

    fn check_finite(&self, a: Var, what: &str) -> Result<()> {
        if self.value(a).data().iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite(format!("NaN entering {what}")));
        }
        Ok(())
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.check_finite(a, "softmax")?;
        let t = self.value(a);
        let cols = t.cols();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let shape = vec![t.rows(), cols];
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax(a), rg))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.check_finite(a, "log_softmax")?;
        let t = self.value(a);
        let cols = t.cols();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(cols) {
            let lse = tensor::log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let shape = vec![t.rows(), cols];
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::LogSoftmax(a), rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = shape2(t);
        if start >= end || end > cols {
            return Err(Error::Dimension(format!(
                "column range {start}..{end} out of bounds for {:?}",
                t.shape()
            )));
        }
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&t.row_slice(r)[start..end]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(vec![rows, end - start], out), Op::SliceCols(a, start), rg))
    }

    /// Side-by-side concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::Dimension("concat of nothing".into()))?;
        if let Some(&bad) = parts.iter().find(|&&p| self.value(p).rows() != rows) {
            return Err(Error::Dimension(format!(
                "concat_cols: {:?} has a different row count than {rows}",
                self.value(bad).shape()
            )));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::from_parts(vec![rows, total], out), Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Vertical stacking of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| Error::Dimension("concat of nothing".into()))?;
        if let Some(&bad) = parts.iter().find(|&&p| self.value(p).cols() != cols) {
            return Err(Error::Dimension(format!(
                "concat_rows: {:?} has a different column count than {cols}",
                self.value(bad).shape()
            )));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let rows = out.len() / cols;
        let rg = self.rg(parts);
        Ok(self.push(Tensor::from_parts(vec![rows, cols], out), Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Selects rows by index (repeats and reordering allowed).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = shape2(t);
        if indices.is_empty() {
            return Err(Error::Dimension("gather of zero rows".into()));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Dimension(format!("row {i} out of bounds for {:?}", t.shape())));
        }
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            out.extend_from_slice(t.row_slice(i));
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::from_parts(vec![indices.len(), cols], out),
            Op::GatherRows(a, indices.to_vec()),
            rg,
        ))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        self.gather_rows(a, &[r])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (rows, cols) = shape2(t);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = t.data()[r * cols + c];
            }
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::from_parts(vec![cols, rows], out), Op::Transpose(a), rg)
    }

    /// Sum of all entries as a `1 × 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Picks single entries `(row, col)` into a `1 × k` row.
    pub fn pick(&mut self, a: Var, at: &[(usize, usize)]) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = shape2(t);
        if at.is_empty() {
            return Err(Error::Dimension("pick of zero entries".into()));
        }
        if let Some(&(r, c)) = at.iter().find(|&&(r, c)| r >= rows || c >= cols) {
            return Err(Error::Dimension(format!("entry ({r},{c}) out of bounds for {:?}", t.shape())));
        }
        let out = at.iter().map(|&(r, c)| t.get(r, c)).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(vec![1, at.len()], out), Op::Pick(a, at.to_vec()), rg))
    }

    /// Same-length convolution of a length-`L` signal with each filter row of
    /// `filters: n × w`, producing an `L × n` feature matrix. The signal is
    /// zero padded by `(w-1)/2` on the left and the remainder on the right.
    pub fn conv1d_frames(&mut self, a: Var, filters: Var) -> Result<Var> {
        let (ta, tf) = (self.value(a), self.value(filters));
        let (nf, width) = shape2(tf);
        let out = conv1d_forward(ta.data(), tf.data(), nf, width);
        let len = ta.numel();
        let rg = self.rg(&[a, filters]);
        Ok(self.push(Tensor::from_parts(vec![len, nf], out), Op::Conv1d(a, filters), rg))
    }

    /// Batch normalization over the rows of `x` using the rows' own statistics.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let tx = self.value(x);
        let (rows, cols) = shape2(tx);
        let mut mean = vec![0.0; cols];
        for r in 0..rows {
            for (m, v) in mean.iter_mut().zip(tx.row_slice(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; cols];
        for r in 0..rows {
            for ((s, v), m) in var.iter_mut().zip(tx.row_slice(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= rows as f64);
        let out = self.batch_norm_impl(x, gamma, beta, &mean, &var, eps, true)?;
        Ok((out, BatchStats { mean, var }))
    }

    /// Batch normalization with fixed statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm_frozen(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        self.batch_norm_impl(x, gamma, beta, mean, var, eps, false)
    }

    #[allow(clippy::too_many_arguments)]
    fn batch_norm_impl(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
        batch_stats: bool,
    ) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let (rows, cols) = shape2(tx);
        if tg.numel() != cols || tb.numel() != cols || mean.len() != cols || var.len() != cols {
            return Err(Error::Dimension(format!(
                "batch norm of {:?} with gamma {:?}, beta {:?}, {} statistics",
                tx.shape(),
                tg.shape(),
                tb.shape(),
                mean.len()
            )));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; rows * cols];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                xhat[i] = (tx.data()[i] - mean[c]) * inv_std[c];
                out[i] = xhat[i] * tg.data()[c] + tb.data()[c];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::from_parts(vec![rows, cols], out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: Tensor::from_parts(vec![rows, cols], xhat),
                inv_std,
                batch_stats,
            },
            rg,
        ))
    }

    /// CTC negative log-likelihood of `target` under `softmax(logits)`, blank = 0.
    pub fn ctc_loss(&mut self, logits: Var, target: &[usize]) -> Result<Var> {
        let (loss, grad) = ctc::ctc_loss_and_grad(self.value(logits), target)?;
        let rg = self.rg(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::Ctc { logits, grad }, rg))
    }

    /// Summed cross-entropy `-Σᵢ log softmax(logitsᵢ)[targetᵢ]`, one target per row.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        self.check_finite(logits, "cross_entropy")?;
        let t = self.value(logits);
        let (rows, cols) = shape2(t);
        if targets.len() != rows {
            return Err(Error::Dimension(format!(
                "{} targets for logits {:?}",
                targets.len(),
                t.shape()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&k| k >= cols) {
            return Err(Error::Dimension(format!("target class {bad} >= {cols}")));
        }
        let mut probs = t.data().to_vec();
        let mut loss = 0.0;
        for (r, row) in probs.chunks_mut(cols).enumerate() {
            let lse = tensor::log_sum_exp(row);
            loss -= row[targets[r]] - lse;
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs: Tensor::from_parts(vec![rows, cols], probs),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(&[1, 1], 1.0));
        let mut leaf_grads: Vec<Option<Tensor>> = Vec::new();
        leaf_grads.resize_with(self.nodes.len(), || None);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let y = &node.value;
            match &node.op {
                Op::Leaf => leaf_grads[i] = Some(g),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ((n, k), m) = (shape2(ta), tb.cols());
                    self.acc_with(&mut grads, *a, |ga| {
                        tensor::matmul_bt_acc(g.data(), tb.data(), ga, n, m, k)
                    });
                    self.acc_with(&mut grads, *b, |gb| {
                        tensor::matmul_at_acc(ta.data(), g.data(), gb, n, k, m)
                    });
                }
                Op::AddRow(x, row) => {
                    let d = g.cols();
                    self.acc_with(&mut grads, *row, |gr| {
                        for chunk in g.data().chunks(d) {
                            for (o, v) in gr.iter_mut().zip(chunk) {
                                *o += v;
                            }
                        }
                    });
                    self.acc(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    if self.requires_grad(*b) {
                        self.acc_ref(&mut grads, *b, &g);
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    self.acc_with(&mut grads, *a, |ga| {
                        for ((o, gv), bv) in ga.iter_mut().zip(g.data()).zip(tb.data()) {
                            *o += gv * bv;
                        }
                    });
                    self.acc_with(&mut grads, *b, |gb| {
                        for ((o, gv), av) in gb.iter_mut().zip(g.data()).zip(ta.data()) {
                            *o += gv * av;
                        }
                    });
                }
                Op::Scale(a, c) => {
                    let mut g = g;
                    g.map_in_place(|v| v * c);
                    self.acc(&mut grads, *a, g);
                }
                Op::Tanh(a) => {
                    let mut g = g;
                    for (gv, yv) in g.data_mut().iter_mut().zip(y.data()) {
                        *gv *= 1.0 - yv * yv;
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::Sigmoid(a) => {
                    let mut g = g;
                    for (gv, yv) in g.data_mut().iter_mut().zip(y.data()) {
                        *gv *= yv * (1.0 - yv);
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::Ln(a) => {
                    let mut g = g;
                    for (gv, xv) in g.data_mut().iter_mut().zip(self.value(*a).data()) {
                        *gv /= xv;
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::Softmax(a) => {
                    let cols = y.cols();
                    let mut g = g;
                    for (grow, yrow) in g.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)) {
                        let s = tensor::dot(grow, yrow);
                        for (gv, yv) in grow.iter_mut().zip(yrow) {
                            *gv = yv * (*gv - s);
                        }
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::LogSoftmax(a) => {
                    let cols = y.cols();
                    let mut g = g;
                    for (grow, yrow) in g.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)) {
                        let s: f64 = grow.iter().sum();
                        for (gv, yv) in grow.iter_mut().zip(yrow) {
                            *gv -= yv.exp() * s;
                        }
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::SliceCols(a, start) => {
                    let w = g.cols();
                    let cols = self.value(*a).cols();
                    self.acc_with(&mut grads, *a, |ga| {
                        for (r, grow) in g.data().chunks(w).enumerate() {
                            for (o, v) in ga[r * cols + start..r * cols + start + w].iter_mut().zip(grow) {
                                *o += v;
                            }
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let total = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        self.acc_with(&mut grads, p, |gp| {
                            for (r, grow) in g.data().chunks(total).enumerate() {
                                for (o, v) in gp[r * w..(r + 1) * w].iter_mut().zip(&grow[offset..offset + w]) {
                                    *o += v;
                                }
                            }
                        });
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).numel();
                        self.acc_with(&mut grads, p, |gp| {
                            for (o, v) in gp.iter_mut().zip(&g.data()[offset..offset + n]) {
                                *o += v;
                            }
                        });
                        offset += n;
                    }
                }
                Op::GatherRows(a, indices) => {
                    let cols = g.cols();
                    self.acc_with(&mut grads, *a, |ga| {
                        for (grow, &src) in g.data().chunks(cols).zip(indices) {
                            for (o, v) in ga[src * cols..(src + 1) * cols].iter_mut().zip(grow) {
                                *o += v;
                            }
                        }
                    });
                }
                Op::Transpose(a) => {
                    let (rows, cols) = shape2(&g);
                    self.acc_with(&mut grads, *a, |ga| {
                        for r in 0..rows {
                            for c in 0..cols {
                                ga[c * rows + r] += g.data()[r * cols + c];
                            }
                        }
                    });
                }
                Op::Sum(a) => {
                    let t = self.value(*a);
                    let gs = g.data()[0];
                    self.acc(&mut grads, *a, Tensor::full(&[t.rows(), t.cols()], gs));
                }
                Op::Pick(a, at) => {
                    let cols = self.value(*a).cols();
                    self.acc_with(&mut grads, *a, |ga| {
                        for (&(r, c), gv) in at.iter().zip(g.data()) {
                            ga[r * cols + c] += gv;
                        }
                    });
                }
                Op::Conv1d(a, f) => {
                    let (ta, tf) = (self.value(*a), self.value(*f));
                    let (nf, width) = shape2(tf);
                    let len = ta.numel();
                    let left = (width - 1) / 2;
                    // out[l, k] = Σ_j F[k, j] · a[l + left - j]
                    self.acc_with(&mut grads, *a, |ga| {
                        for l in 0..len {
                            for k in 0..nf {
                                let gv = g.data()[l * nf + k];
                                for j in 0..width {
                                    if let Some(src) = (l + left).checked_sub(j).filter(|&s| s < len) {
                                        ga[src] += gv * tf.data()[k * width + j];
                                    }
                                }
                            }
                        }
                    });
                    self.acc_with(&mut grads, *f, |gf| {
                        for l in 0..len {
                            for k in 0..nf {
                                let gv = g.data()[l * nf + k];
                                for j in 0..width {
                                    if let Some(src) = (l + left).checked_sub(j).filter(|&s| s < len) {
                                        gf[k * width + j] += gv * ta.data()[src];
                                    }
                                }
                            }
                        }
                    });
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let (rows, cols) = shape2(&g);
                    let tg = self.value(*gamma);
                    let mut sum_g = vec![0.0; cols];
                    let mut sum_gx = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            let i = r * cols + c;
                            sum_g[c] += g.data()[i];
                            sum_gx[c] += g.data()[i] * xhat.data()[i];
                        }
                    }
                    self.acc_with(&mut grads, *gamma, |gg| {
                        for (o, v) in gg.iter_mut().zip(&sum_gx) {
                            *o += v;
                        }
                    });
                    self.acc_with(&mut grads, *beta, |gb| {
                        for (o, v) in gb.iter_mut().zip(&sum_g) {
                            *o += v;
                        }
                    });
                    let n = rows as f64;
                    self.acc_with(&mut grads, *x, |gx| {
                        for r in 0..rows {
                            for c in 0..cols {
                                let i = r * cols + c;
                                let scale = tg.data()[c] * inv_std[c];
                                gx[i] += if *batch_stats {
                                    scale * (g.data()[i] - sum_g[c] / n - xhat.data()[i] * sum_gx[c] / n)
                                } else {
                                    scale * g.data()[i]
                                };
                            }
                        }
                    });
                }
                Op::Ctc { logits, grad } => {
                    let gs = g.data()[0];
                    self.acc_with(&mut grads, *logits, |gl| {
                        for (o, v) in gl.iter_mut().zip(grad.data()) {
                            *o += gs * v;
                        }
                    });
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let gs = g.data()[0];
                    let cols = probs.cols();
                    self.acc_with(&mut grads, *logits, |gl| {
                        for (o, p) in gl.iter_mut().zip(probs.data()) {
                            *o += gs * p;
                        }
                        for (r, &k) in targets.iter().enumerate() {
                            gl[r * cols + k] -= gs;
                        }
                    });
                }
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.requires_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                let t = self.value(v);
                *slot = Some(Tensor::from_parts(vec![t.rows(), t.cols()], g.into_data()));
            }
        }
    }

    fn acc_ref(&self, grads: &mut [Option<Tensor>], v: Var, g: &Tensor) {
        self.acc_with(grads, v, |buf| {
            for (o, x) in buf.iter_mut().zip(g.data()) {
                *o += x;
            }
        });
    }

    fn acc_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.requires_grad(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            let t = self.value(v);
            *slot = Some(Tensor::zeros(&[t.rows(), t.cols()]));
        }
        f(slot.as_mut().expect("slot filled above").data_mut());
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

fn conv1d_forward(signal: &[f64], filters: &[f64], nf: usize, width: usize) -> Vec<f64> {
    let len = signal.len();
    let left = (width - 1) / 2;
    let mut out = vec![0.0; len * nf];
    for l in 0..len {
        for k in 0..nf {
            let mut acc = 0.0;
            for j in 0..width {
                if let Some(src) = (l + left).checked_sub(j).filter(|&s| s < len) {
                    acc += filters[k * width + j] * signal[src];
                }
            }
            out[l * nf + k] = acc;
        }
    }
    out
}
