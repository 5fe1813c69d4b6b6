//! Dense row-major matrices with a tape-based reverse-mode differentiator.
//!
//! Every operation on a [`Tape`] evaluates eagerly and appends a node that
//! remembers its inputs. [`Tape::backward`] walks the nodes in reverse and
//! accumulates adjoints, so a value used by several downstream operations
//! receives the sum of their contributions.
//!
//! Broadcasting is deliberately narrow: the right-hand operand of an
//! element-wise binary op may be a `1 x cols` row that is repeated over the
//! rows of the left operand. Anything else is a [`TensorError::ShapeMismatch`].
//!
//! ```
//! use sitegnn::tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::from_col(vec![1.0, 2.0]));
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(&tape, x).data(), &[2.0, 4.0]);
//! ```

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("invalid segment layout: {0}")]
    InvalidSegments(String),
    #[error("index {index} out of bounds for {len} rows")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    BadLength {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("loss must be a 1x1 tensor, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("loss does not depend on any tensor that requires a gradient")]
    DisconnectedLoss,
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// A dense `rows x cols` matrix of `f64`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TensorError::BadLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, 0.0)
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(1, 1, value)
    }

    /// Column vector `len x 1`.
    pub fn from_col(data: Vec<f64>) -> Self {
        Self {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    /// Row vector `1 x len`.
    pub fn from_row(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    left: (1, cols),
                    right: (1, row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Copy of the listed columns, in the given order.
    pub fn select_cols(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.cols) {
            return Err(TensorError::IndexOutOfBounds {
                index: bad,
                len: self.cols,
            });
        }
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        Ok(Self {
            rows: self.rows,
            cols: cols.len(),
            data,
        })
    }

    /// Copy of the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            if r >= self.rows {
                return Err(TensorError::IndexOutOfBounds {
                    index: r,
                    len: self.rows,
                });
            }
            data.extend_from_slice(self.row(r));
        }
        Ok(Self {
            rows: rows.len(),
            cols: self.cols,
            data,
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Ascending segment ids with precomputed offsets, as used by the
/// segment reductions. Segment `s` covers rows `offsets[s]..offsets[s + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Segments {
    ids: Vec<usize>,
    offsets: Vec<usize>,
}

impl Segments {
    pub fn new(ids: Vec<usize>, n_segments: usize) -> Result<Self> {
        if ids.windows(2).any(|w| w[0] > w[1]) {
            return Err(TensorError::InvalidSegments(
                "segment ids must be sorted ascending".into(),
            ));
        }
        if let Some(&last) = ids.last() {
            if last >= n_segments {
                return Err(TensorError::InvalidSegments(format!(
                    "segment id {last} exceeds segment count {n_segments}"
                )));
            }
        }
        let mut offsets = vec![0; n_segments + 1];
        for &id in &ids {
            offsets[id + 1] += 1;
        }
        for s in 0..n_segments {
            offsets[s + 1] += offsets[s];
        }
        Ok(Self { ids, offsets })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn n_segments(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn range(&self, segment: usize) -> std::ops::Range<usize> {
        self.offsets[segment]..self.offsets[segment + 1]
    }

    /// Number of rows in each segment.
    pub fn counts(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Log(Var),
    Neg(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<Segments>),
    SegmentSoftmax(Var, Arc<Segments>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of evaluated operations. Inputs always precede the
/// operations that consume them, so the node order is a topological order.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, or zeros of its shape when the loss does not depend on it.
    pub fn wrt(&self, tape: &Tape, var: Var) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.value(var).shape();
                Tensor::zeros(r, c)
            }
        }
    }
}

/// Same shape, or `b` is a single row broadcast over the rows of `a`.
fn check_broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<bool> {
    if a.shape() == b.shape() {
        Ok(false)
    } else if b.rows == 1 && b.cols == a.cols {
        Ok(true)
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        })
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let cols = a.cols;
    let data = if b.rows == a.rows {
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect()
    } else {
        a.data
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b.data[i % cols]))
            .collect()
    };
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data,
    }
}

/// Reduce a full-shape adjoint down to the shape of a possibly broadcast operand.
fn reduce_to(grad: Tensor, shape: (usize, usize)) -> Tensor {
    if grad.shape() == shape {
        return grad;
    }
    let mut out = Tensor::zeros(shape.0, shape.1);
    for r in 0..grad.rows {
        for (o, g) in out.data.iter_mut().zip(grad.row(r)) {
            *o += g;
        }
    }
    out
}

fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Tensor {
        rows: n,
        cols: m,
        data: out,
    }
}

fn transpose(a: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.cols, a.rows);
    for r in 0..a.rows {
        for c in 0..a.cols {
            out.data[c * a.rows + r] = a.data[r * a.cols + c];
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Record an input tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, op: &'static str, value: Tensor, kind: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op: kind,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols != bv.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let out = matmul_raw(av, bv);
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_broadcast("add", self.value(a), self.value(b))?;
        let out = zip_broadcast(self.value(a), self.value(b), |x, y| x + y);
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_broadcast("sub", self.value(a), self.value(b))?;
        let out = zip_broadcast(self.value(a), self.value(b), |x, y| x - y);
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_broadcast("mul", self.value(a), self.value(b))?;
        let out = zip_broadcast(self.value(a), self.value(b), |x, y| x * y);
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        check_broadcast("div", self.value(a), self.value(b))?;
        let out = zip_broadcast(self.value(a), self.value(b), |x, y| x / y);
        self.push("div", out, Op::Div(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * factor);
        self.push("scale", out, Op::Scale(a, factor), &[a])
    }

    /// Adds a fixed offset to every entry.
    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + offset);
        self.push("add_scalar", out, Op::AddScalar(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push("relu", out, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push("leaky_relu", out, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::exp);
        self.push("exp", out, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::ln);
        self.push("log", out, Op::Log(a), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| -x);
        self.push("neg", out, Op::Neg(a), &[a])
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push("clamp", out, Op::Clamp(a, lo, hi), &[a])
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data.iter().sum();
        self.push("sum", Tensor::scalar(total), Op::Sum(a), &[a])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows != bv.rows {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let cols = av.cols + bv.cols;
        let mut data = Vec::with_capacity(av.rows * cols);
        for r in 0..av.rows {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let out = Tensor {
            rows: av.rows,
            cols,
            data,
        };
        self.push("concat_cols", out, Op::ConcatCols(a, b), &[a, b])
    }

    /// Row `r` of the output is row `index[r]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= av.rows) {
            return Err(TensorError::IndexOutOfBounds {
                index: bad,
                len: av.rows,
            });
        }
        let mut data = Vec::with_capacity(index.len() * av.cols);
        for &i in index.iter() {
            data.extend_from_slice(av.row(i));
        }
        let out = Tensor {
            rows: index.len(),
            cols: av.cols,
            data,
        };
        self.push("gather_rows", out, Op::GatherRows(a, index), &[a])
    }

    /// Row-wise sum within each segment; empty segments give zero rows.
    pub fn segment_sum(&mut self, a: Var, segments: Arc<Segments>) -> Result<Var> {
        let av = self.value(a);
        if av.rows != segments.len() {
            return Err(TensorError::ShapeMismatch {
                op: "segment_sum",
                left: av.shape(),
                right: (segments.len(), av.cols),
            });
        }
        let mut out = Tensor::zeros(segments.n_segments(), av.cols);
        for (r, &s) in segments.ids().iter().enumerate() {
            for (o, v) in out.row_mut(s).iter_mut().zip(av.row(r)) {
                *o += v;
            }
        }
        self.push("segment_sum", out, Op::SegmentSum(a, segments), &[a])
    }

    /// Column-wise softmax within each segment. Rows of an empty segment do
    /// not exist, so isolated segments simply contribute nothing.
    pub fn segment_softmax(&mut self, a: Var, segments: Arc<Segments>) -> Result<Var> {
        let av = self.value(a);
        if av.rows != segments.len() {
            return Err(TensorError::ShapeMismatch {
                op: "segment_softmax",
                left: av.shape(),
                right: (segments.len(), av.cols),
            });
        }
        let cols = av.cols;
        let mut out = Tensor::zeros(av.rows, cols);
        for s in 0..segments.n_segments() {
            let range = segments.range(s);
            if range.is_empty() {
                continue;
            }
            for c in 0..cols {
                let max = range
                    .clone()
                    .map(|r| av.data[r * cols + c])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for r in range.clone() {
                    let e = (av.data[r * cols + c] - max).exp();
                    out.data[r * cols + c] = e;
                    total += e;
                }
                for r in range.clone() {
                    out.data[r * cols + c] /= total;
                }
            }
        }
        self.push(
            "segment_softmax",
            out,
            Op::SegmentSoftmax(a, segments),
            &[a],
        )
    }

    /// Reverse sweep from a `1 x 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(TensorError::NotScalar(lv.shape()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(TensorError::DisconnectedLoss);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut accumulate = |var: Var, delta: Tensor| {
            if !self.nodes[var.0].requires_grad {
                return;
            }
            match &mut grads[var.0] {
                Some(existing) => {
                    for (e, d) in existing.data.iter_mut().zip(&delta.data) {
                        *e += d;
                    }
                }
                slot => *slot = Some(delta),
            }
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    accumulate(*a, matmul_raw(g, &transpose(bv)));
                }
                if self.requires_grad(*b) {
                    accumulate(*b, matmul_raw(&transpose(av), g));
                }
            }
            Op::Add(a, b) => {
                accumulate(*a, g.clone());
                accumulate(*b, reduce_to(g.clone(), self.value(*b).shape()));
            }
            Op::Sub(a, b) => {
                accumulate(*a, g.clone());
                accumulate(*b, reduce_to(g.map(|x| -x), self.value(*b).shape()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    accumulate(*a, zip_broadcast(g, bv, |x, y| x * y));
                }
                if self.requires_grad(*b) {
                    let full = zip_full(g, av, |x, y| x * y);
                    accumulate(*b, reduce_to(full, bv.shape()));
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                if self.requires_grad(*a) {
                    accumulate(*a, zip_broadcast(g, bv, |x, y| x / y));
                }
                if self.requires_grad(*b) {
                    // d(a/b)/db = -(a/b)/b
                    let ratio = zip_full(g, out, |x, y| -x * y);
                    let full = zip_broadcast(&ratio, bv, |x, y| x / y);
                    accumulate(*b, reduce_to(full, bv.shape()));
                }
            }
            Op::Scale(a, factor) => accumulate(*a, g.map(|x| x * factor)),
            Op::AddScalar(a) => accumulate(*a, g.clone()),
            Op::Sigmoid(a) => accumulate(*a, zip_full(g, out, |x, y| x * y * (1.0 - y))),
            Op::Relu(a) => {
                let input = self.value(*a);
                accumulate(*a, zip_full(g, input, |x, y| if y > 0.0 { x } else { 0.0 }));
            }
            Op::LeakyRelu(a, slope) => {
                let input = self.value(*a);
                accumulate(
                    *a,
                    zip_full(g, input, |x, y| if y > 0.0 { x } else { slope * x }),
                );
            }
            Op::Exp(a) => accumulate(*a, zip_full(g, out, |x, y| x * y)),
            Op::Log(a) => accumulate(*a, zip_full(g, self.value(*a), |x, y| x / y)),
            Op::Neg(a) => accumulate(*a, g.map(|x| -x)),
            Op::Clamp(a, lo, hi) => {
                let input = self.value(*a);
                accumulate(
                    *a,
                    zip_full(g, input, |x, y| if y >= *lo && y <= *hi { x } else { 0.0 }),
                );
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                accumulate(*a, Tensor::full(r, c, g.data[0]));
            }
            Op::ConcatCols(a, b) => {
                let ac = self.value(*a).cols;
                let bc = self.value(*b).cols;
                let mut ga = Tensor::zeros(g.rows, ac);
                let mut gb = Tensor::zeros(g.rows, bc);
                for r in 0..g.rows {
                    let row = g.row(r);
                    ga.row_mut(r).copy_from_slice(&row[..ac]);
                    gb.row_mut(r).copy_from_slice(&row[ac..]);
                }
                accumulate(*a, ga);
                accumulate(*b, gb);
            }
            Op::GatherRows(a, index) => {
                let (r, c) = self.value(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                for (k, &i) in index.iter().enumerate() {
                    for (o, v) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                accumulate(*a, ga);
            }
            Op::SegmentSum(a, segments) => {
                let c = g.cols;
                let mut ga = Tensor::zeros(segments.len(), c);
                for (r, &s) in segments.ids().iter().enumerate() {
                    ga.row_mut(r).copy_from_slice(g.row(s));
                }
                accumulate(*a, ga);
            }
            Op::SegmentSoftmax(a, segments) => {
                let cols = out.cols;
                let mut ga = Tensor::zeros(out.rows, cols);
                for s in 0..segments.n_segments() {
                    let range = segments.range(s);
                    for c in 0..cols {
                        let dot: f64 = range
                            .clone()
                            .map(|r| out.data[r * cols + c] * g.data[r * cols + c])
                            .sum();
                        for r in range.clone() {
                            let i = r * cols + c;
                            ga.data[i] = out.data[i] * (g.data[i] - dot);
                        }
                    }
                }
                accumulate(*a, ga);
            }
        }
    }
}

fn zip_full(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

/// Compares the reverse-mode gradient of `f` at `x` against central finite
/// differences and returns `max_i |g_ad - g_fd| / max(1, |g_fd|)`.
///
/// `f` receives a fresh tape and the variable holding `x`; it must return a
/// `1 x 1` loss.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let loss = f(&mut tape, xv)?;
    let analytic = match tape.backward(loss) {
        Ok(grads) => grads.wrt(&tape, xv),
        Err(TensorError::DisconnectedLoss) => Tensor::zeros(x.rows, x.cols),
        Err(e) => return Err(e),
    };

    let eval = |point: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(point);
        let loss = f(&mut tape, v)?;
        let value = tape.value(loss);
        if value.shape() != (1, 1) {
            return Err(TensorError::NotScalar(value.shape()));
        }
        Ok(value.data[0])
    };

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data[i] += eps;
        let mut minus = x.clone();
        minus.data[i] -= eps;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let err = (analytic.data[i] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Seeded generator used for every random draw in the crate (ChaCha8, a
/// fixed stream-cipher construction, so seeds reproduce across platforms).
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Glorot/Xavier uniform initialization: `U(-b, b)` with `b = sqrt(6 / (rows + cols))`.
pub fn glorot_init(rows: usize, cols: usize, seed: u64) -> Tensor {
    glorot_from_rng(rows, cols, &mut seeded_rng(seed))
}

pub fn glorot_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

pub fn glorot_from_rng<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = glorot_bound(rows, cols);
    let data = (0..rows * cols)
        .map(|_| (2.0 * rng.random::<f64>() - 1.0) * bound)
        .collect();
    Tensor { rows, cols, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn segs(ids: &[usize], n: usize) -> Arc<Segments> {
        Arc::new(Segments::new(ids.to_vec(), n).unwrap())
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let y = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5]);
    }

    #[test]
    fn segment_sum_by_hand() {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::from_col(vec![1.0, 2.0, 3.0]));
        let s = tape.segment_sum(v, segs(&[0, 0, 1], 2)).unwrap();
        assert_eq!(tape.value(s).data(), &[3.0, 3.0]);
    }

    #[test]
    fn segment_softmax_uniform_and_empty_segments() {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::from_col(vec![0.0, 0.0]));
        let s = tape.segment_softmax(v, segs(&[0, 0], 1)).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);

        // segment 1 is empty, segment 2 has a single row
        let v = tape.constant(Tensor::from_col(vec![1.0, -3.0, 7.0]));
        let s = tape.segment_softmax(v, segs(&[0, 0, 2], 3)).unwrap();
        let out = tape.value(s).data();
        assert!((out[0] + out[1] - 1.0).abs() < 1e-12);
        assert_eq!(out[2], 1.0);
        let summed = tape.segment_sum(s, segs(&[0, 0, 2], 3)).unwrap();
        assert_eq!(tape.value(summed).data()[1], 0.0);
    }

    #[test]
    fn unsorted_segments_rejected() {
        assert!(matches!(
            Segments::new(vec![1, 0], 2),
            Err(TensorError::InvalidSegments(_))
        ));
        assert!(Segments::new(vec![0, 3], 2).is_err());
    }

    #[test]
    fn shape_mismatch_and_row_broadcast() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(3, 2));
        let bad = tape.constant(Tensor::zeros(2, 2));
        assert!(matches!(
            tape.add(a, bad),
            Err(TensorError::ShapeMismatch { .. })
        ));
        let col = tape.constant(Tensor::zeros(3, 1));
        assert!(tape.add(a, col).is_err());
        let row = tape.constant(Tensor::from_row(vec![1.0, 2.0]));
        let out = tape.add(a, row).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(tape.matmul(a, a).is_err());
    }

    #[test]
    fn non_finite_surfaces_as_error() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        assert_eq!(
            tape.log(z).unwrap_err(),
            TensorError::NonFinite { op: "log" }
        );
        let big = tape.constant(Tensor::scalar(1000.0));
        assert!(tape.exp(big).is_err());
    }

    #[test]
    fn linear_map_gradient() {
        // loss = sum(W x): dloss/dW[i][j] = x[j]
        let mut tape = Tape::new();
        let w = tape.param(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let x = tape.constant(Tensor::from_col(vec![5.0, -1.0]));
        let y = tape.matmul(w, x).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(&tape, w).data(), &[5.0, -1.0, 5.0, -1.0]);
    }

    #[test]
    fn sigmoid_gradient_matches_closed_form() {
        let mut tape = Tape::new();
        let z = tape.param(Tensor::scalar(0.3));
        let y = tape.sigmoid(z).unwrap();
        let grads = tape.backward(y).unwrap();
        let s = sigmoid(0.3);
        assert!((grads.wrt(&tape, z).data()[0] - s * (1.0 - s)).abs() < 1e-15);
    }

    #[test]
    fn independent_tensor_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::scalar(2.0));
        let t = tape.param(Tensor::from_col(vec![1.0, 1.0]));
        let loss = tape.mul(a, a).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(t).is_none());
        assert_eq!(grads.wrt(&tape, t).data(), &[0.0, 0.0]);
    }

    #[test]
    fn disconnected_and_non_scalar_loss() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(1.0));
        assert_eq!(tape.backward(c).unwrap_err(), TensorError::DisconnectedLoss);
        let v = tape.param(Tensor::zeros(2, 1));
        assert!(matches!(tape.backward(v), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = x*x + 3x at x=2 -> 2x + 3 = 7
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let sq = tape.mul(x, x).unwrap();
        let lin = tape.scale(x, 3.0).unwrap();
        let loss = tape.add(sq, lin).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(&tape, x).data(), &[7.0]);
    }

    #[test]
    fn grad_check_sum_of_squares() {
        let x = Tensor::from_col(vec![1.0, 2.0]);
        let err = grad_check(
            |tape, v| {
                let sq = tape.mul(v, v)?;
                tape.sum(sq)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn grad_check_constant_function() {
        let x = Tensor::from_col(vec![1.0, 2.0]);
        let err = grad_check(|tape, _| Ok(tape.constant(Tensor::scalar(4.0))), &x, 1e-6).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn grad_check_every_primitive() {
        let mut rng = seeded_rng(11);
        let x = glorot_from_rng(4, 3, &mut rng);
        let row = glorot_from_rng(1, 3, &mut rng);
        let w = glorot_from_rng(3, 2, &mut rng);
        let seg = segs(&[0, 0, 2, 2], 3);
        let gather: Arc<[usize]> = Arc::from(vec![3, 0, 0, 1, 2]);
        let err = grad_check(
            |tape, v| {
                let r = tape.constant(row.clone());
                let wv = tape.constant(w.clone());
                let a = tape.add(v, r)?;
                let b = tape.sub(a, v)?;
                let c = tape.mul(v, b)?;
                let pos = tape.exp(v)?;
                let d = tape.div(c, pos)?;
                let l = tape.log(pos)?;
                let e = tape.leaky_relu(d, 0.2)?;
                let f = tape.relu(l)?;
                let g = tape.sigmoid(e)?;
                let h = tape.concat_cols(f, g)?;
                let hw = tape.concat_cols(wv, wv)?;
                let hw = tape.neg(hw)?;
                let k = tape.matmul(v, hw)?;
                let soft = tape.segment_softmax(k, seg.clone())?;
                let agg = tape.segment_sum(soft, seg.clone())?;
                let gathered = tape.gather_rows(h, gather.clone())?;
                let clamped = tape.clamp(gathered, -0.5, 0.9)?;
                let s1 = tape.sum(clamped)?;
                let s2 = tape.sum(agg)?;
                let s3 = tape.mul(s1, s2)?;
                let s4 = tape.scale(s3, 0.5)?;
                tape.add_scalar(s4, 1.0)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn broadcast_row_gradient_is_column_sum() {
        let row = Tensor::from_row(vec![0.5, -0.25]);
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![-1.0, 0.5]]).unwrap();
        for op in 0..4 {
            let err = grad_check(
                |tape, v| {
                    let av = tape.constant(a.clone());
                    let out = match op {
                        0 => tape.add(av, v)?,
                        1 => tape.sub(av, v)?,
                        2 => tape.mul(av, v)?,
                        _ => tape.div(av, v)?,
                    };
                    let sq = tape.mul(out, out)?;
                    tape.sum(sq)
                },
                &row,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-6, "op {op}: {err}");
        }
    }

    #[test]
    fn glorot_is_seeded_and_bounded() {
        let a = glorot_init(3, 2, 42);
        let b = glorot_init(3, 2, 42);
        assert_eq!(a.len(), 6);
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let bound = glorot_bound(3, 2);
        assert!(a.data().iter().all(|v| v.abs() <= bound));
        assert_ne!(glorot_init(3, 2, 43), a);
    }

    #[test]
    fn backward_is_deterministic() {
        let build = || {
            let mut tape = Tape::new();
            let w = tape.param(glorot_init(3, 1, 5));
            let x = tape.constant(glorot_init(6, 3, 6));
            let z = tape.matmul(x, w).unwrap();
            let s = tape.sigmoid(z).unwrap();
            let loss = tape.sum(s).unwrap();
            let g = tape.backward(loss).unwrap();
            g.wrt(&tape, w)
        };
        assert_eq!(build(), build());
    }
}
