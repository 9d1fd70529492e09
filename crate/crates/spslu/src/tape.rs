//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! A [`Tape`] records one forward computation as an ordered list of nodes;
//! every node's inputs precede it, so a single reverse sweep propagates
//! gradients. The tape borrows parameter data for its lifetime — run one
//! forward pass, call [`Tape::backward`], read gradients, then drop the tape
//! before mutating parameters.
//!
//! Values are row-major matrices; vectors are `1 × n`. Every primitive
//! checks its output for NaN/Inf: the first non-finite value poisons the
//! tape, and `backward` reports it as [`Error::Numeric`] naming the node.
//!
//! ```
//! use spslu::tape::Tape;
//! use spslu::tensor::Tensor;
//!
//! let theta = Tensor::from_vec(1, 1, vec![3.0f64]);
//! let mut tape = Tape::new();
//! let x = tape.param(&theta, "theta");
//! let y = tape.mul(x, x); // y = x²
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(tape.value(y), &[9.0]);
//! assert_eq!(grads.get(x).unwrap(), &[6.0]); // dy/dx = 2x
//! ```

use crate::error::{Error, Result};
use crate::kernels::{axpy, dot, gemm_nn, gemm_nt, gemm_tn};
use crate::rng::Prng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::borrow::Cow;

/// Floor for probabilities entering a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Value(usize);

#[derive(Debug)]
enum Op<S: Scalar> {
    Leaf,
    /// a[m×k] · b[k×n]
    Matmul { a: usize, b: usize },
    /// a[m×k] · b[n×k]ᵀ — used for query·keyᵀ attention scores
    MatmulNt { a: usize, b: usize },
    /// x[m×k] · w[n×k]ᵀ + bias[1×n] broadcast over rows
    Affine { x: usize, w: usize, bias: usize },
    ConcatCols { parts: Vec<usize> },
    /// Copy of row `t` of a matrix.
    Row { x: usize, t: usize },
    /// Stack `1 × n` rows into a `T × n` matrix.
    StackRows { rows: Vec<usize> },
    SliceCols { x: usize, start: usize },
    Sigmoid { x: usize },
    Tanh { x: usize },
    Mul { a: usize, b: usize },
    Add { a: usize, b: usize },
    AddN { parts: Vec<usize> },
    Scale { x: usize, k: S },
    SoftmaxRows { x: usize },
    /// Inverted dropout; mask entries are 0 or 1/keep.
    Dropout { x: usize, mask: Vec<S> },
    /// Gather rows of an embedding table.
    Embed { table: usize, ids: Vec<usize> },
    /// Negative log-likelihood of one class of a `1 × n` distribution.
    Nll { dist: usize, class: usize },
}

struct Node<'p, S: Scalar> {
    op: Op<S>,
    rows: usize,
    cols: usize,
    value: Cow<'p, [S]>,
    /// Set for parameter leaves so numeric aborts can name the tensor.
    label: Option<String>,
}

/// Gradients produced by one backward pass, indexed by tape handle.
pub struct Grads<S: Scalar> {
    by_node: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Grads<S> {
    /// Gradient of the loss w.r.t. `v`; `None` if `v` did not influence it.
    pub fn get(&self, v: Value) -> Option<&[S]> {
        self.by_node[v.0].as_deref()
    }

    pub fn take(&mut self, v: Value) -> Option<Vec<S>> {
        self.by_node[v.0].take()
    }
}

/// Records one forward pass; `'p` borrows the parameter storage.
pub struct Tape<'p, S: Scalar> {
    nodes: Vec<Node<'p, S>>,
    poison: Option<String>,
    backward_done: bool,
}

impl<'p, S: Scalar> Default for Tape<'p, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, S: Scalar> Tape<'p, S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), poison: None, backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First non-finite node observed, if any.
    pub fn poisoned(&self) -> Option<&str> {
        self.poison.as_deref()
    }

    pub fn value(&self, v: Value) -> &[S] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Value) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    /// Scalar extraction for `1 × 1` values.
    pub fn scalar(&self, v: Value) -> S {
        let n = &self.nodes[v.0];
        assert_eq!((n.rows, n.cols), (1, 1), "scalar() on non-scalar value");
        n.value[0]
    }

    fn push(&mut self, op: Op<S>, rows: usize, cols: usize, value: Cow<'p, [S]>, label: Option<String>) -> Value {
        debug_assert_eq!(value.len(), rows * cols);
        if self.poison.is_none() && !value.iter().all(|x| x.is_finite()) {
            let name = match &label {
                Some(l) => l.clone(),
                None => format!("{} (node {})", op_name(&op), self.nodes.len()),
            };
            self.poison = Some(name);
        }
        self.nodes.push(Node { op, rows, cols, value, label });
        Value(self.nodes.len() - 1)
    }

    /// Trainable leaf borrowing tensor storage; gradients flow to it.
    pub fn param(&mut self, t: &'p Tensor<S>, name: &str) -> Value {
        self.push(Op::Leaf, t.rows, t.cols, Cow::Borrowed(&t.data), Some(name.to_string()))
    }

    /// Non-trainable leaf with owned data (inputs, one-hot vectors, …).
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<S>) -> Value {
        assert_eq!(data.len(), rows * cols, "constant shape mismatch");
        self.push(Op::Leaf, rows, cols, Cow::Owned(data), None)
    }

    pub fn matmul(&mut self, a: Value, b: Value) -> Value {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        assert_eq!(ka, kb, "matmul inner dimension mismatch: {ka} vs {kb}");
        let mut out = vec![S::zero(); m * n];
        gemm_nn(m, ka, n, self.value(a), self.value(b), &mut out);
        self.push(Op::Matmul { a: a.0, b: b.0 }, m, n, Cow::Owned(out), None)
    }

    /// a · bᵀ with b stored row-major `[n × k]`.
    pub fn matmul_nt(&mut self, a: Value, b: Value) -> Value {
        let (m, ka) = self.shape(a);
        let (n, kb) = self.shape(b);
        assert_eq!(ka, kb, "matmul_nt inner dimension mismatch: {ka} vs {kb}");
        let mut out = vec![S::zero(); m * n];
        gemm_nt(m, ka, n, self.value(a), self.value(b), &mut out);
        self.push(Op::MatmulNt { a: a.0, b: b.0 }, m, n, Cow::Owned(out), None)
    }

    /// x · wᵀ + bias, the linear-layer primitive. `w` is `[out × in]`.
    pub fn affine(&mut self, x: Value, w: Value, bias: Value) -> Value {
        let (m, k) = self.shape(x);
        let (n, kw) = self.shape(w);
        let (br, bc) = self.shape(bias);
        assert_eq!(k, kw, "affine: input width {k} vs weight fan-in {kw}");
        assert_eq!((br, bc), (1, n), "affine: bias must be 1×{n}");
        let mut out = vec![S::zero(); m * n];
        let bv = self.value(bias);
        for r in 0..m {
            out[r * n..(r + 1) * n].copy_from_slice(bv);
        }
        gemm_nt(m, k, n, self.value(x), self.value(w), &mut out);
        self.push(Op::Affine { x: x.0, w: w.0, bias: bias.0 }, m, n, Cow::Owned(out), None)
    }

    /// Row-wise concatenation: all parts share a row count.
    pub fn concat_cols(&mut self, parts: &[Value]) -> Value {
        assert!(!parts.is_empty(), "concat of zero parts");
        let rows = self.shape(parts[0]).0;
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        for &p in parts {
            assert_eq!(self.shape(p).0, rows, "concat_cols: row count mismatch");
        }
        let mut out = vec![S::zero(); rows * total];
        for r in 0..rows {
            let mut at = r * total;
            for &p in parts {
                let c = self.shape(p).1;
                out[at..at + c].copy_from_slice(&self.value(p)[r * c..(r + 1) * c]);
                at += c;
            }
        }
        let ids = parts.iter().map(|v| v.0).collect();
        self.push(Op::ConcatCols { parts: ids }, rows, total, Cow::Owned(out), None)
    }

    pub fn row(&mut self, x: Value, t: usize) -> Value {
        let (rows, cols) = self.shape(x);
        assert!(t < rows, "row {t} out of range for {rows} rows");
        let out = self.value(x)[t * cols..(t + 1) * cols].to_vec();
        self.push(Op::Row { x: x.0, t }, 1, cols, Cow::Owned(out), None)
    }

    pub fn stack_rows(&mut self, rows: &[Value]) -> Value {
        assert!(!rows.is_empty(), "stack of zero rows");
        let cols = self.shape(rows[0]).1;
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            assert_eq!(self.shape(r), (1, cols), "stack_rows: each part must be 1×{cols}");
            out.extend_from_slice(self.value(r));
        }
        let ids = rows.iter().map(|v| v.0).collect();
        self.push(Op::StackRows { rows: ids }, rows.len(), cols, Cow::Owned(out), None)
    }

    pub fn slice_cols(&mut self, x: Value, start: usize, len: usize) -> Value {
        let (rows, cols) = self.shape(x);
        assert!(start + len <= cols, "slice {start}..{} out of {cols} cols", start + len);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xv[r * cols + start..r * cols + start + len]);
        }
        self.push(Op::SliceCols { x: x.0, start }, rows, len, Cow::Owned(out), None)
    }

    pub fn sigmoid(&mut self, x: Value) -> Value {
        let (rows, cols) = self.shape(x);
        let out = self.value(x).iter().map(|&v| sigmoid_scalar(v)).collect();
        self.push(Op::Sigmoid { x: x.0 }, rows, cols, Cow::Owned(out), None)
    }

    pub fn tanh(&mut self, x: Value) -> Value {
        let (rows, cols) = self.shape(x);
        let out = self.value(x).iter().map(|&v| v.tanh()).collect();
        self.push(Op::Tanh { x: x.0 }, rows, cols, Cow::Owned(out), None)
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Value {
        let sa = self.shape(a);
        assert_eq!(sa, self.shape(b), "elementwise mul shape mismatch");
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        self.push(Op::Mul { a: a.0, b: b.0 }, sa.0, sa.1, Cow::Owned(out), None)
    }

    pub fn add(&mut self, a: Value, b: Value) -> Value {
        let sa = self.shape(a);
        assert_eq!(sa, self.shape(b), "elementwise add shape mismatch");
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        self.push(Op::Add { a: a.0, b: b.0 }, sa.0, sa.1, Cow::Owned(out), None)
    }

    pub fn add_n(&mut self, parts: &[Value]) -> Value {
        assert!(!parts.is_empty(), "add_n of zero parts");
        let (rows, cols) = self.shape(parts[0]);
        let mut out = self.value(parts[0]).to_vec();
        for &p in &parts[1..] {
            assert_eq!(self.shape(p), (rows, cols), "add_n shape mismatch");
            for (o, &x) in out.iter_mut().zip(self.value(p)) {
                *o += x;
            }
        }
        let ids = parts.iter().map(|v| v.0).collect();
        self.push(Op::AddN { parts: ids }, rows, cols, Cow::Owned(out), None)
    }

    pub fn scale(&mut self, x: Value, k: S) -> Value {
        let (rows, cols) = self.shape(x);
        let out = self.value(x).iter().map(|&v| v * k).collect();
        self.push(Op::Scale { x: x.0, k }, rows, cols, Cow::Owned(out), None)
    }

    /// Numerically stable row-wise softmax (max-shifted).
    pub fn softmax_rows(&mut self, x: Value) -> Value {
        let (rows, cols) = self.shape(x);
        assert!(cols > 0, "softmax of empty row");
        let xv = self.value(x);
        let mut out = vec![S::zero(); rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let orow = &mut out[r * cols..(r + 1) * cols];
            let mut sum = S::zero();
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = (v - max).exp();
                sum += *o;
            }
            let inv = S::one() / sum;
            for o in orow.iter_mut() {
                *o = *o * inv;
            }
        }
        self.push(Op::SoftmaxRows { x: x.0 }, rows, cols, Cow::Owned(out), None)
    }

    /// Inverted dropout: keeps each element with probability `1 - p`,
    /// scaling kept elements by `1/(1-p)`. With `train == false` or `p == 0`
    /// this is an exact identity (no node is recorded).
    pub fn dropout(&mut self, x: Value, p: f64, train: bool, rng: &mut Prng) -> Value {
        assert!((0.0..1.0).contains(&p), "dropout probability must be in [0,1)");
        if !train || p == 0.0 {
            return x;
        }
        let (rows, cols) = self.shape(x);
        let keep_inv = S::from_f64(1.0 / (1.0 - p));
        let mask: Vec<S> = (0..rows * cols)
            .map(|_| if rng.next_f64() >= p { keep_inv } else { S::zero() })
            .collect();
        let out = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        self.push(Op::Dropout { x: x.0, mask }, rows, cols, Cow::Owned(out), None)
    }

    /// Gather rows of `table` (an embedding matrix) by id.
    pub fn embedding_lookup(&mut self, table: Value, ids: &[usize]) -> Value {
        let (vocab, dim) = self.shape(table);
        assert!(!ids.is_empty(), "embedding lookup of empty id list");
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            assert!(id < vocab, "embedding id {id} out of vocabulary range {vocab}");
            out.extend_from_slice(&tv[id * dim..(id + 1) * dim]);
        }
        self.push(
            Op::Embed { table: table.0, ids: ids.to_vec() },
            ids.len(),
            dim,
            Cow::Owned(out),
            None,
        )
    }

    /// −log(dist[class]) with the probability floored at [`PROB_FLOOR`].
    pub fn nll(&mut self, dist: Value, class: usize) -> Value {
        let (rows, cols) = self.shape(dist);
        assert_eq!(rows, 1, "nll expects a 1×n distribution");
        assert!(class < cols, "gold index {class} out of range {cols}");
        let p = self.value(dist)[class].max(S::from_f64(PROB_FLOOR));
        let out = vec![-p.ln()];
        self.push(Op::Nll { dist: dist.0, class }, 1, 1, Cow::Owned(out), None)
    }

    /// Reverse sweep from `loss` (must be `1 × 1`). Consumes the forward
    /// pass: calling it twice, or on an empty tape, is a programming error.
    pub fn backward(&mut self, loss: Value) -> Result<Grads<S>> {
        assert!(!self.nodes.is_empty(), "backward without a forward pass");
        assert!(!self.backward_done, "backward called twice on one tape");
        self.backward_done = true;
        assert_eq!(self.shape(loss), (1, 1), "loss must be scalar");
        if let Some(name) = &self.poison {
            return Err(Error::Numeric(name.clone()));
        }

        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![S::one()]);

        for id in (0..=loss.0).rev() {
            let Some(gy) = grads[id].take() else { continue };
            if !gy.iter().all(|x| x.is_finite()) {
                let node = &self.nodes[id];
                let name = match &node.label {
                    Some(l) => format!("gradient of {l}"),
                    None => format!("gradient of {} (node {id})", op_name(&node.op)),
                };
                return Err(Error::Numeric(name));
            }
            self.accumulate(id, &gy, &mut grads);
            grads[id] = Some(gy);
        }
        Ok(Grads { by_node: grads })
    }

    fn grad_buf<'g>(
        grads: &'g mut [Option<Vec<S>>],
        nodes: &[Node<'p, S>],
        id: usize,
    ) -> &'g mut Vec<S> {
        grads[id].get_or_insert_with(|| vec![S::zero(); nodes[id].value.len()])
    }

    fn accumulate(&self, id: usize, gy: &[S], grads: &mut [Option<Vec<S>>]) {
        let nodes = &self.nodes;
        let node = &nodes[id];
        let (m, n) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let k = nodes[*a].cols;
                {
                    let ga = Self::grad_buf(grads, nodes, *a);
                    gemm_nt(m, n, k, gy, &nodes[*b].value, ga);
                }
                let gb = Self::grad_buf(grads, nodes, *b);
                gemm_tn(m, k, n, &nodes[*a].value, gy, gb);
            }
            Op::MatmulNt { a, b } => {
                let k = nodes[*a].cols;
                {
                    let ga = Self::grad_buf(grads, nodes, *a);
                    gemm_nn(m, n, k, gy, &nodes[*b].value, ga);
                }
                let gb = Self::grad_buf(grads, nodes, *b);
                gemm_tn(m, n, k, gy, &nodes[*a].value, gb);
            }
            Op::Affine { x, w, bias } => {
                let k = nodes[*x].cols;
                {
                    let gx = Self::grad_buf(grads, nodes, *x);
                    gemm_nn(m, n, k, gy, &nodes[*w].value, gx);
                }
                {
                    let gw = Self::grad_buf(grads, nodes, *w);
                    gemm_tn(m, n, k, gy, &nodes[*x].value, gw);
                }
                let gb = Self::grad_buf(grads, nodes, *bias);
                for r in 0..m {
                    axpy(S::one(), &gy[r * n..(r + 1) * n], gb);
                }
            }
            Op::ConcatCols { parts } => {
                let mut start = 0;
                for &p in parts {
                    let c = nodes[p].cols;
                    let gp = Self::grad_buf(grads, nodes, p);
                    for r in 0..m {
                        axpy(S::one(), &gy[r * n + start..r * n + start + c], &mut gp[r * c..(r + 1) * c]);
                    }
                    start += c;
                }
            }
            Op::Row { x, t } => {
                let gx = Self::grad_buf(grads, nodes, *x);
                axpy(S::one(), gy, &mut gx[t * n..(t + 1) * n]);
            }
            Op::StackRows { rows } => {
                for (r, &part) in rows.iter().enumerate() {
                    let gp = Self::grad_buf(grads, nodes, part);
                    axpy(S::one(), &gy[r * n..(r + 1) * n], gp);
                }
            }
            Op::SliceCols { x, start } => {
                let xc = nodes[*x].cols;
                let gx = Self::grad_buf(grads, nodes, *x);
                for r in 0..m {
                    axpy(S::one(), &gy[r * n..(r + 1) * n], &mut gx[r * xc + start..r * xc + start + n]);
                }
            }
            Op::Sigmoid { x } => {
                let y = &node.value;
                let gx = Self::grad_buf(grads, nodes, *x);
                for i in 0..gy.len() {
                    gx[i] += gy[i] * y[i] * (S::one() - y[i]);
                }
            }
            Op::Tanh { x } => {
                let y = &node.value;
                let gx = Self::grad_buf(grads, nodes, *x);
                for i in 0..gy.len() {
                    gx[i] += gy[i] * (S::one() - y[i] * y[i]);
                }
            }
            Op::Mul { a, b } => {
                {
                    let bv = &nodes[*b].value;
                    let ga = Self::grad_buf(grads, nodes, *a);
                    for i in 0..gy.len() {
                        ga[i] += gy[i] * bv[i];
                    }
                }
                let av = &nodes[*a].value;
                let gb = Self::grad_buf(grads, nodes, *b);
                for i in 0..gy.len() {
                    gb[i] += gy[i] * av[i];
                }
            }
            Op::Add { a, b } => {
                axpy(S::one(), gy, Self::grad_buf(grads, nodes, *a));
                axpy(S::one(), gy, Self::grad_buf(grads, nodes, *b));
            }
            Op::AddN { parts } => {
                for &p in parts {
                    axpy(S::one(), gy, Self::grad_buf(grads, nodes, p));
                }
            }
            Op::Scale { x, k } => {
                axpy(*k, gy, Self::grad_buf(grads, nodes, *x));
            }
            Op::SoftmaxRows { x } => {
                // dx = y ⊙ (dy − ⟨dy, y⟩) per row
                let y = &node.value;
                let gx = Self::grad_buf(grads, nodes, *x);
                for r in 0..m {
                    let yr = &y[r * n..(r + 1) * n];
                    let gyr = &gy[r * n..(r + 1) * n];
                    let s = dot(gyr, yr);
                    let gxr = &mut gx[r * n..(r + 1) * n];
                    for i in 0..n {
                        gxr[i] += yr[i] * (gyr[i] - s);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                let gx = Self::grad_buf(grads, nodes, *x);
                for i in 0..gy.len() {
                    gx[i] += gy[i] * mask[i];
                }
            }
            Op::Embed { table, ids } => {
                let dim = n;
                let gt = Self::grad_buf(grads, nodes, *table);
                for (r, &id) in ids.iter().enumerate() {
                    axpy(S::one(), &gy[r * dim..(r + 1) * dim], &mut gt[id * dim..(id + 1) * dim]);
                }
            }
            Op::Nll { dist, class } => {
                let p = nodes[*dist].value[*class].max(S::from_f64(PROB_FLOOR));
                let gd = Self::grad_buf(grads, nodes, *dist);
                gd[*class] -= gy[0] / p;
            }
        }
    }
}

fn sigmoid_scalar<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn op_name<S: Scalar>(op: &Op<S>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Matmul { .. } => "matmul",
        Op::MatmulNt { .. } => "matmul_nt",
        Op::Affine { .. } => "affine",
        Op::ConcatCols { .. } => "concat_cols",
        Op::Row { .. } => "row",
        Op::StackRows { .. } => "stack_rows",
        Op::SliceCols { .. } => "slice_cols",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Tanh { .. } => "tanh",
        Op::Mul { .. } => "mul",
        Op::Add { .. } => "add",
        Op::AddN { .. } => "add_n",
        Op::Scale { .. } => "scale",
        Op::SoftmaxRows { .. } => "softmax",
        Op::Dropout { .. } => "dropout",
        Op::Embed { .. } => "embedding_lookup",
        Op::Nll { .. } => "cross_entropy",
    }
}

/// One step of a standard gated LSTM cell, composed from tape primitives.
///
/// `w` packs the four gate blocks `[input | forget | candidate | output]`
/// over the concatenated `[x, h_prev]` input, so `w` is `[4H × (in+H)]` and
/// `bias` is `[1 × 4H]`. Returns `(h, c)`.
pub fn lstm_cell<'p, S: Scalar>(
    tape: &mut Tape<'p, S>,
    x: Value,
    h_prev: Value,
    c_prev: Value,
    w: Value,
    bias: Value,
) -> (Value, Value) {
    let (_, in_dim) = tape.shape(x);
    let (_, hidden) = tape.shape(h_prev);
    let (wr, wc) = tape.shape(w);
    assert_eq!(wr, 4 * hidden, "lstm_cell: weight rows {wr} != 4·hidden {}", 4 * hidden);
    assert_eq!(wc, in_dim + hidden, "lstm_cell: weight cols {wc} != in+hidden {}", in_dim + hidden);
    assert_eq!(tape.shape(c_prev), (1, hidden), "lstm_cell: cell state shape mismatch");

    let xh = tape.concat_cols(&[x, h_prev]);
    let z = tape.affine(xh, w, bias);
    let zi = tape.slice_cols(z, 0, hidden);
    let zf = tape.slice_cols(z, hidden, hidden);
    let zg = tape.slice_cols(z, 2 * hidden, hidden);
    let zo = tape.slice_cols(z, 3 * hidden, hidden);
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);
    let fc = tape.mul(f, c_prev);
    let ig = tape.mul(i, g);
    let c = tape.add(fc, ig);
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc);
    (h, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(rows: usize, cols: usize, data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(rows, cols, data)
    }

    #[test]
    fn softmax_symmetry_and_analytic() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(1, 2, vec![0.0, 0.0]);
        let y = tape.softmax_rows(x);
        assert_eq!(tape.value(y), &[0.5, 0.5]);

        let x2 = tape.constant(1, 2, vec![2.0f64.ln(), 0.0]);
        let y2 = tape.softmax_rows(x2);
        let v = tape.value(y2);
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((v[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_stable_under_large_logits() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(1, 2, vec![1000.0, 0.0]);
        let y = tape.softmax_rows(x);
        let v = tape.value(y);
        assert!(v[0] > 0.999_999);
        assert!(v[1] >= 0.0 && v[1] < 1e-9);
        assert!(tape.poisoned().is_none());
        assert!((v[0] + v[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut tape: Tape<f64> = Tape::new();
        let certain = tape.constant(1, 2, vec![1.0, 0.0]);
        let l0 = tape.nll(certain, 0);
        assert_eq!(tape.scalar(l0), 0.0);

        let uniform = tape.constant(1, 2, vec![0.5, 0.5]);
        let l1 = tape.nll(uniform, 1);
        assert!((tape.scalar(l1) - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_sums_match_hand_enumeration() {
        // Three tokens, per-token distributions over 3 classes; the summed
        // loss must equal the brute-force enumeration of -log p[gold].
        let dists = [
            [0.7, 0.2, 0.1],
            [0.1, 0.8, 0.1],
            [0.25, 0.25, 0.5],
        ];
        let golds = [0usize, 1, 2];
        let mut tape: Tape<f64> = Tape::new();
        let mut parts = Vec::new();
        for (d, &g) in dists.iter().zip(&golds) {
            let v = tape.constant(1, 3, d.to_vec());
            parts.push(tape.nll(v, g));
        }
        let total = tape.add_n(&parts);
        let by_hand: f64 = dists.iter().zip(&golds).map(|(d, &g)| -d[g].ln()).sum();
        assert!((tape.scalar(total) - by_hand).abs() < 1e-12);
    }

    #[test]
    fn concat_and_identity_matmul() {
        let mut tape: Tape<f64> = Tape::new();
        let a = tape.constant(1, 2, vec![1.0, 2.0]);
        let b = tape.constant(1, 1, vec![3.0]);
        let c = tape.concat_cols(&[a, b]);
        assert_eq!(tape.value(c), &[1.0, 2.0, 3.0]);

        let eye = tape.constant(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let m = tape.constant(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = tape.matmul(eye, m);
        assert_eq!(tape.value(p), tape.value(m));
    }

    #[test]
    fn dropout_inference_is_identity() {
        let mut rng = Prng::stream(1, crate::rng::Stream::Dropout);
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(1, 4, vec![1.0, -2.0, 3.0, 4.0]);
        let y = tape.dropout(x, 0.4, false, &mut rng);
        assert_eq!(x, y); // no node recorded at all
    }

    #[test]
    fn lstm_cell_zero_weights() {
        let hidden = 1;
        let w = t64(4, 2, vec![0.0; 8]);
        let b = t64(1, 4, vec![0.0; 4]);
        let mut tape: Tape<f64> = Tape::new();
        let wv = tape.param(&w, "w");
        let bv = tape.param(&b, "b");
        let x = tape.constant(1, 1, vec![0.3]);

        // c_prev = 0 → h = 0, c = 0
        let h0 = tape.constant(1, hidden, vec![0.0]);
        let c0 = tape.constant(1, hidden, vec![0.0]);
        let (h, c) = lstm_cell(&mut tape, x, h0, c0, wv, bv);
        assert_eq!(tape.value(h), &[0.0]);
        assert_eq!(tape.value(c), &[0.0]);

        // c_prev = 2 → gates 0.5: c = 1.0, h = 0.5·tanh(1)
        let c2 = tape.constant(1, hidden, vec![2.0]);
        let (h2, c2out) = lstm_cell(&mut tape, x, h0, c2, wv, bv);
        assert!((tape.value(c2out)[0] - 1.0).abs() < 1e-12);
        assert!((tape.value(h2)[0] - 0.5 * 1.0f64.tanh()).abs() < 1e-6);
        assert!((tape.value(h2)[0] - 0.380797).abs() < 1e-6);
    }

    #[test]
    fn poison_reported_on_backward() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(1, 1, vec![1e308]);
        let y = tape.mul(x, x); // overflows to +inf
        let z = tape.nll(y, 0);
        let err = tape.backward(z).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(err.to_string().contains("mul"));
    }

    #[test]
    #[should_panic(expected = "backward called twice")]
    fn double_backward_panics() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(1, 1, vec![2.0]);
        let y = tape.mul(x, x);
        let _ = tape.backward(y).unwrap();
        let _ = tape.backward(y);
    }

    #[test]
    #[should_panic(expected = "backward without a forward pass")]
    fn backward_on_empty_tape_panics() {
        let mut tape: Tape<f64> = Tape::new();
        let _ = tape.backward(Value(0));
    }

    #[test]
    #[should_panic(expected = "inner dimension mismatch")]
    fn matmul_shape_mismatch_panics() {
        let mut tape: Tape<f64> = Tape::new();
        let a = tape.constant(1, 2, vec![1.0, 2.0]);
        let b = tape.constant(3, 1, vec![1.0, 2.0, 3.0]);
        let _ = tape.matmul(a, b);
    }

    #[test]
    fn grad_flows_through_unused_branches_as_none() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(1, 1, vec![2.0]);
        let unused = tape.constant(1, 1, vec![5.0]);
        let y = tape.mul(x, x);
        let grads = tape.backward(y).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.get(x).unwrap(), &[4.0]);
    }
}
