//! Minimal reverse-mode differentiation over dense rank-≤2 tensors.
//!
//! A [`Tape`] records primitive applications in insertion order, which is
//! also a topological order. Values are computed eagerly when a node is
//! recorded; [`Tape::forward`] replays the recorded program on new leaf
//! values and [`Tape::backward`] accumulates first derivatives of a scalar
//! node with respect to every earlier node.
//!
//! Hyperbolic operations are assembled from these primitives in [`hyper`];
//! [`check`] compares analytic gradients with central differences.

pub mod check;
pub mod hyper;

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::manifold::ARCOSH_MIN;
use crate::tensor::Tensor;

const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
const SELU_SCALE: f64 = 1.050_700_987_355_480_5;
const ARTANH_MAX: f64 = 1.0 - 1e-15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffError {
    #[error("node {node} ({op}): {detail}")]
    Shape {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("backward seed node {node} is not scalar (shape {rows}x{cols})")]
    NotScalar {
        node: usize,
        rows: usize,
        cols: usize,
    },
    #[error("input '{0}' is not defined on this tape")]
    UnknownInput(String),
    #[error("non-finite value at {name}[{index}]")]
    NonFinite { name: String, index: usize },
}

pub type Result<T> = std::result::Result<T, DiffError>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Exp,
    Ln,
    Sqrt,
    Square,
    Tanh,
    /// Input clamped to `±(1 − 1e−15)`.
    Artanh,
    /// Input clamped to `≥ 1 + 1e−15`.
    Arcosh,
    Cosh,
    Sinh,
    Sigmoid,
    LogSigmoid,
    Relu,
    LeakyRelu(f64),
    Selu,
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Sqrt => x.sqrt(),
            Unary::Square => x * x,
            Unary::Tanh => x.tanh(),
            Unary::Artanh => {
                let x = x.clamp(-ARTANH_MAX, ARTANH_MAX);
                0.5 * ((1.0 + x) / (1.0 - x)).ln()
            }
            Unary::Arcosh => x.max(ARCOSH_MIN).acosh(),
            Unary::Cosh => x.cosh(),
            Unary::Sinh => x.sinh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::LogSigmoid => log_sigmoid(x),
            Unary::Relu => x.max(0.0),
            Unary::LeakyRelu(a) => {
                if x > 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Unary::Selu => {
                if x > 0.0 {
                    SELU_SCALE * x
                } else {
                    SELU_SCALE * SELU_ALPHA * x.exp_m1()
                }
            }
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Exp => y,
            Unary::Ln => 1.0 / x,
            Unary::Sqrt => 0.5 / y,
            Unary::Square => 2.0 * x,
            Unary::Tanh => 1.0 - y * y,
            Unary::Artanh => {
                let x = x.clamp(-ARTANH_MAX, ARTANH_MAX);
                1.0 / (1.0 - x * x)
            }
            Unary::Arcosh => {
                let x = x.max(ARCOSH_MIN);
                1.0 / ((x - 1.0) * (x + 1.0)).sqrt()
            }
            Unary::Cosh => x.sinh(),
            Unary::Sinh => x.cosh(),
            Unary::Sigmoid => y * (1.0 - y),
            Unary::LogSigmoid => sigmoid(-x),
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::LeakyRelu(a) => {
                if x > 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Unary::Selu => {
                if x > 0.0 {
                    SELU_SCALE
                } else {
                    SELU_SCALE * SELU_ALPHA * x.exp()
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Offset(Var, f64),
    Unary(Var, Unary),
    ClampMin(Var, f64),
    ClampMax(Var, f64),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    RowNorm(Var, f64),
    Gather(Var, Arc<[usize]>),
    ScatterAdd(Var, Arc<[usize]>, usize),
    /// `out[dst_e] += w_e · x[src_e]` with `w` an `m×1` column.
    EdgeAggregate(Var, Var, Arc<[usize]>, Arc<[usize]>, usize),
    SegmentSoftmax(Var, Arc<[usize]>, usize),
    SliceCols(Var, usize, usize),
    ConcatCols(Var, Var),
}

impl Op {
    fn inputs(&self) -> [Option<Var>; 2] {
        match self {
            Op::Leaf => [None, None],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::MatMul(a, b)
            | Op::MatMulT(a, b)
            | Op::ConcatCols(a, b)
            | Op::EdgeAggregate(a, b, ..) => [Some(*a), Some(*b)],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Offset(a, _)
            | Op::Unary(a, _)
            | Op::ClampMin(a, _)
            | Op::ClampMax(a, _)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowSum(a)
            | Op::RowNorm(a, _)
            | Op::Gather(a, _)
            | Op::ScatterAdd(a, _, _)
            | Op::SegmentSoftmax(a, _, _)
            | Op::SliceCols(a, _, _) => [Some(*a), None],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Unary(..) => "unary",
            Op::ClampMin(..) => "clamp_min",
            Op::ClampMax(..) => "clamp_max",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Transpose(..) => "transpose",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowSum(..) => "row_sum",
            Op::RowNorm(..) => "row_norm",
            Op::Gather(..) => "gather",
            Op::ScatterAdd(..) => "scatter_add",
            Op::EdgeAggregate(..) => "edge_aggregate",
            Op::SegmentSoftmax(..) => "segment_softmax",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Recorded program plus the forward value of every node.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    inputs: BTreeMap<String, Var>,
    outputs: BTreeMap<String, Var>,
}

/// First derivatives of one scalar node with respect to every node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero when `v` does not influence the seed.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
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

    /// A named leaf; replaced by [`Tape::forward`] when the name is supplied.
    pub fn input(&mut self, name: &str, value: Tensor) -> Var {
        let v = self.push(Op::Leaf, value);
        self.inputs.insert(name.to_string(), v);
        v
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn mark_output(&mut self, name: &str, v: Var) {
        self.outputs.insert(name.to_string(), v);
    }

    pub fn input_var(&self, name: &str) -> Option<Var> {
        self.inputs.get(name).copied()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let value = self.eval(&op, self.nodes.len())?;
        Ok(self.push(op, value))
    }

    fn record_infallible(&mut self, op: Op) -> Var {
        self.record(op).expect("shape-agnostic op")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.record_infallible(Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.record_infallible(Op::Scale(a, s))
    }

    pub fn offset(&mut self, a: Var, s: f64) -> Var {
        self.record_infallible(Op::Offset(a, s))
    }

    pub fn unary(&mut self, a: Var, f: Unary) -> Var {
        self.record_infallible(Op::Unary(a, f))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Ln)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn artanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Artanh)
    }

    pub fn arcosh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Arcosh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::LogSigmoid)
    }

    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Var {
        self.record_infallible(Op::ClampMin(a, lo))
    }

    pub fn clamp_max(&mut self, a: Var, hi: f64) -> Var {
        self.record_infallible(Op::ClampMax(a, hi))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a, b))
    }

    /// `a · bᵀ`; with `b` a `d_out × d_in` weight this maps rows `d_in → d_out`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMulT(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        self.record_infallible(Op::Transpose(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.record_infallible(Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.record_infallible(Op::Mean(a))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        self.record_infallible(Op::RowSum(a))
    }

    /// Row Euclidean norms clamped below at `min` (the gradient is zero where clamped).
    pub fn row_norm(&mut self, a: Var, min: f64) -> Var {
        self.record_infallible(Op::RowNorm(a, min))
    }

    pub fn gather(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        self.record(Op::Gather(a, index))
    }

    pub fn scatter_add(&mut self, a: Var, index: Arc<[usize]>, rows: usize) -> Result<Var> {
        self.record(Op::ScatterAdd(a, index, rows))
    }

    /// Weighted sum of source rows into destination rows, one weight per edge.
    pub fn edge_aggregate(
        &mut self,
        x: Var,
        w: Var,
        src: Arc<[usize]>,
        dst: Arc<[usize]>,
        rows: usize,
    ) -> Result<Var> {
        self.record(Op::EdgeAggregate(x, w, src, dst, rows))
    }

    /// Softmax of an `m×1` column within groups given by `segment[i] < segments`.
    pub fn segment_softmax(
        &mut self,
        a: Var,
        segment: Arc<[usize]>,
        segments: usize,
    ) -> Result<Var> {
        self.record(Op::SegmentSoftmax(a, segment, segments))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.record(Op::SliceCols(a, start, end))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::ConcatCols(a, b))
    }

    fn eval(&self, op: &Op, node: usize) -> Result<Tensor> {
        let val = |v: &Var| &self.nodes[v.0].value;
        let shape_err = |detail: String| DiffError::Shape {
            node,
            op: op.name(),
            detail,
        };
        Ok(match op {
            Op::Leaf => unreachable!("leaves are not evaluated"),
            Op::Add(a, b) => broadcast(val(a), val(b), |x, y| x + y).map_err(shape_err)?,
            Op::Sub(a, b) => broadcast(val(a), val(b), |x, y| x - y).map_err(shape_err)?,
            Op::Mul(a, b) => broadcast(val(a), val(b), |x, y| x * y).map_err(shape_err)?,
            Op::Div(a, b) => broadcast(val(a), val(b), |x, y| x / y).map_err(shape_err)?,
            Op::Neg(a) => val(a).map(|x| -x),
            Op::Scale(a, s) => val(a).map(|x| x * s),
            Op::Offset(a, s) => val(a).map(|x| x + s),
            Op::Unary(a, f) => val(a).map(|x| f.apply(x)),
            Op::ClampMin(a, lo) => val(a).map(|x| x.max(*lo)),
            Op::ClampMax(a, hi) => val(a).map(|x| x.min(*hi)),
            Op::MatMul(a, b) => {
                let (x, y) = (val(a), val(b));
                if x.cols() != y.rows() {
                    return Err(shape_err(format!("{:?} · {:?}", x.shape(), y.shape())));
                }
                x.matmul(y)
            }
            Op::MatMulT(a, b) => {
                let (x, y) = (val(a), val(b));
                if x.cols() != y.cols() {
                    return Err(shape_err(format!("{:?} · {:?}ᵀ", x.shape(), y.shape())));
                }
                x.matmul_t(y)
            }
            Op::Transpose(a) => val(a).transpose(),
            Op::Sum(a) => Tensor::scalar(val(a).sum()),
            Op::Mean(a) => {
                let x = val(a);
                Tensor::scalar(x.sum() / x.len().max(1) as f64)
            }
            Op::RowSum(a) => {
                let x = val(a);
                Tensor::column((0..x.rows()).map(|i| x.row(i).iter().sum()).collect())
            }
            Op::RowNorm(a, min) => {
                let x = val(a);
                Tensor::column(
                    (0..x.rows())
                        .map(|i| crate::tensor::norm(x.row(i)).max(*min))
                        .collect(),
                )
            }
            Op::Gather(a, index) => {
                let x = val(a);
                if let Some(&bad) = index.iter().find(|&&i| i >= x.rows()) {
                    return Err(shape_err(format!("index {bad} out of {} rows", x.rows())));
                }
                let mut out = Vec::with_capacity(index.len() * x.cols());
                for &i in index.iter() {
                    out.extend_from_slice(x.row(i));
                }
                Tensor::from_vec(index.len(), x.cols(), out)
            }
            Op::EdgeAggregate(a, w, src, dst, rows) => {
                let (x, w) = (val(a), val(w));
                if src.len() != dst.len() || w.shape() != (src.len(), 1) {
                    return Err(shape_err(format!(
                        "{} sources, {} targets, weights {:?}",
                        src.len(),
                        dst.len(),
                        w.shape()
                    )));
                }
                if let Some(&bad) = src.iter().find(|&&i| i >= x.rows()) {
                    return Err(shape_err(format!("source {bad} out of {} rows", x.rows())));
                }
                if let Some(&bad) = dst.iter().find(|&&i| i >= *rows) {
                    return Err(shape_err(format!("target {bad} out of {rows} rows")));
                }
                let mut out = Tensor::zeros(*rows, x.cols());
                for (e, (&s, &d)) in src.iter().zip(dst.iter()).enumerate() {
                    let we = w.data()[e];
                    for (o, v) in out.row_mut(d).iter_mut().zip(x.row(s)) {
                        *o += we * v;
                    }
                }
                out
            }
            Op::ScatterAdd(a, index, rows) => {
                let x = val(a);
                if index.len() != x.rows() {
                    return Err(shape_err(format!(
                        "{} indices for {} rows",
                        index.len(),
                        x.rows()
                    )));
                }
                if let Some(&bad) = index.iter().find(|&&i| i >= *rows) {
                    return Err(shape_err(format!("index {bad} out of {rows} rows")));
                }
                let mut out = Tensor::zeros(*rows, x.cols());
                for (r, &i) in index.iter().enumerate() {
                    for (o, v) in out.row_mut(i).iter_mut().zip(x.row(r)) {
                        *o += v;
                    }
                }
                out
            }
            Op::SegmentSoftmax(a, seg, segments) => {
                let x = val(a);
                if x.cols() != 1 || seg.len() != x.rows() {
                    return Err(shape_err(format!(
                        "scores {:?} with {} segment ids",
                        x.shape(),
                        seg.len()
                    )));
                }
                if let Some(&bad) = seg.iter().find(|&&s| s >= *segments) {
                    return Err(shape_err(format!("segment {bad} out of {segments}")));
                }
                let mut max = vec![f64::NEG_INFINITY; *segments];
                for (&s, &v) in seg.iter().zip(x.data()) {
                    max[s] = max[s].max(v);
                }
                let e: Vec<f64> = seg
                    .iter()
                    .zip(x.data())
                    .map(|(&s, &v)| (v - max[s]).exp())
                    .collect();
                let mut total = vec![0.0; *segments];
                for (&s, &v) in seg.iter().zip(&e) {
                    total[s] += v;
                }
                Tensor::column(seg.iter().zip(&e).map(|(&s, &v)| v / total[s]).collect())
            }
            Op::SliceCols(a, start, end) => {
                let x = val(a);
                if start >= end || *end > x.cols() {
                    return Err(shape_err(format!("columns {start}..{end} of {}", x.cols())));
                }
                let w = end - start;
                let mut out = Vec::with_capacity(x.rows() * w);
                for i in 0..x.rows() {
                    out.extend_from_slice(&x.row(i)[*start..*end]);
                }
                Tensor::from_vec(x.rows(), w, out)
            }
            Op::ConcatCols(a, b) => {
                let (x, y) = (val(a), val(b));
                if x.rows() != y.rows() {
                    return Err(shape_err(format!("{:?} ‖ {:?}", x.shape(), y.shape())));
                }
                let mut out = Vec::with_capacity(x.len() + y.len());
                for i in 0..x.rows() {
                    out.extend_from_slice(x.row(i));
                    out.extend_from_slice(y.row(i));
                }
                Tensor::from_vec(x.rows(), x.cols() + y.cols(), out)
            }
        })
    }

    /// Replays the recorded program with new values for the named inputs.
    ///
    /// Returns the values of all named inputs and marked outputs.
    pub fn forward(
        &mut self,
        inputs: &BTreeMap<String, Tensor>,
    ) -> Result<BTreeMap<String, Tensor>> {
        let mut replaced = vec![None; self.nodes.len()];
        for (name, value) in inputs {
            let v = self
                .inputs
                .get(name)
                .ok_or_else(|| DiffError::UnknownInput(name.clone()))?;
            replaced[v.0] = Some(value.clone());
        }
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                if let Some(v) = replaced[i].take() {
                    self.nodes[i].value = v;
                }
                continue;
            }
            let op = self.nodes[i].op.clone();
            self.nodes[i].value = self.eval(&op, i)?;
        }
        let mut out = BTreeMap::new();
        for (name, v) in self.inputs.iter().chain(&self.outputs) {
            out.insert(name.clone(), self.nodes[v.0].value.clone());
        }
        Ok(out)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, seed: Var) -> Result<Gradients> {
        self.backward_pruned(seed, None)
    }

    /// Like [`Tape::backward`] but only propagates along paths that reach one
    /// of `wrt`; gradients of every other node are left empty.
    pub fn backward_wrt(&self, seed: Var, wrt: &[Var]) -> Result<Gradients> {
        self.backward_pruned(seed, Some(wrt))
    }

    fn backward_pruned(&self, seed: Var, wrt: Option<&[Var]>) -> Result<Gradients> {
        let (r, c) = self.shape(seed);
        if (r, c) != (1, 1) {
            return Err(DiffError::NotScalar {
                node: seed.0,
                rows: r,
                cols: c,
            });
        }
        let relevant: Vec<bool> = match wrt {
            None => vec![true; seed.0 + 1],
            Some(w) => {
                let mut rel = vec![false; seed.0 + 1];
                for v in w.iter().filter(|v| v.0 <= seed.0) {
                    rel[v.0] = true;
                }
                for i in 0..=seed.0 {
                    if !rel[i] {
                        rel[i] = self.nodes[i]
                            .op
                            .inputs()
                            .into_iter()
                            .flatten()
                            .any(|v| rel[v.0]);
                    }
                }
                rel
            }
        };
        let mut grads: Vec<Option<Tensor>> = vec![None; seed.0 + 1];
        grads[seed.0] = Some(Tensor::scalar(1.0));
        for i in (0..=seed.0).rev() {
            if !relevant[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            for (input, contribution) in
                self.local_grads(&node.op, &node.value, &g, &|v: Var| relevant[v.0])
            {
                if relevant[input.0] {
                    accumulate(&mut grads[input.0], contribution);
                }
            }
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    /// Gradients of the node's inputs given the gradient `g` of its output.
    fn local_grads(
        &self,
        op: &Op,
        out: &Tensor,
        g: &Tensor,
        need: &dyn Fn(Var) -> bool,
    ) -> Vec<(Var, Tensor)> {
        let val = |v: &Var| &self.nodes[v.0].value;
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![
                (*a, unbroadcast(g.clone(), val(a).shape())),
                (*b, unbroadcast(g.clone(), val(b).shape())),
            ],
            Op::Sub(a, b) => vec![
                (*a, unbroadcast(g.clone(), val(a).shape())),
                (*b, unbroadcast(g.map(|x| -x), val(b).shape())),
            ],
            Op::Mul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if need(*a) {
                    let ga = broadcast(g, val(b), |x, y| x * y).expect("recorded shapes");
                    out.push((*a, unbroadcast(ga, val(a).shape())));
                }
                if need(*b) {
                    let gb = broadcast(g, val(a), |x, y| x * y).expect("recorded shapes");
                    out.push((*b, unbroadcast(gb, val(b).shape())));
                }
                out
            }
            Op::Div(a, b) => {
                let mut res = Vec::with_capacity(2);
                if need(*a) {
                    let ga = broadcast(g, val(b), |x, y| x / y).expect("recorded shapes");
                    res.push((*a, unbroadcast(ga, val(a).shape())));
                }
                if need(*b) {
                    // d(a/b)/db = -out / b
                    let q = broadcast(out, val(b), |o, y| -o / y).expect("recorded shapes");
                    let gb = broadcast(g, &q, |x, y| x * y).expect("recorded shapes");
                    res.push((*b, unbroadcast(gb, val(b).shape())));
                }
                res
            }
            Op::Neg(a) => vec![(*a, g.map(|x| -x))],
            Op::Scale(a, s) => vec![(*a, g.map(|x| x * s))],
            Op::Offset(a, _) => vec![(*a, g.clone())],
            Op::Unary(a, f) => {
                let x = val(a);
                let data = g
                    .data()
                    .iter()
                    .zip(x.data().iter().zip(out.data()))
                    .map(|(gi, (xi, yi))| gi * f.derivative(*xi, *yi))
                    .collect();
                vec![(*a, Tensor::from_vec(x.rows(), x.cols(), data))]
            }
            Op::ClampMin(a, lo) => vec![(*a, mask(g, val(a), |x| x > *lo))],
            Op::ClampMax(a, hi) => vec![(*a, mask(g, val(a), |x| x < *hi))],
            Op::MatMul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if need(*a) {
                    out.push((*a, g.matmul_t(val(b))));
                }
                if need(*b) {
                    out.push((*b, val(a).t_matmul(g)));
                }
                out
            }
            Op::MatMulT(a, b) => {
                let mut out = Vec::with_capacity(2);
                if need(*a) {
                    out.push((*a, g.matmul(val(b))));
                }
                if need(*b) {
                    out.push((*b, g.t_matmul(val(a))));
                }
                out
            }
            Op::Transpose(a) => vec![(*a, g.transpose())],
            Op::Sum(a) => {
                let (r, c) = val(a).shape();
                vec![(*a, Tensor::full(r, c, g.item()))]
            }
            Op::Mean(a) => {
                let (r, c) = val(a).shape();
                vec![(*a, Tensor::full(r, c, g.item() / (r * c).max(1) as f64))]
            }
            Op::RowSum(a) => {
                let (r, c) = val(a).shape();
                let mut t = Tensor::zeros(r, c);
                for i in 0..r {
                    let gi = g.get(i, 0);
                    t.row_mut(i).iter_mut().for_each(|v| *v = gi);
                }
                vec![(*a, t)]
            }
            Op::RowNorm(a, min) => {
                let x = val(a);
                let mut t = Tensor::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let n = crate::tensor::norm(x.row(i));
                    if n > *min {
                        let s = g.get(i, 0) / n;
                        for (o, v) in t.row_mut(i).iter_mut().zip(x.row(i)) {
                            *o = s * v;
                        }
                    }
                }
                vec![(*a, t)]
            }
            Op::Gather(a, index) => {
                let x = val(a);
                let mut t = Tensor::zeros(x.rows(), x.cols());
                for (r, &i) in index.iter().enumerate() {
                    for (o, v) in t.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                vec![(*a, t)]
            }
            Op::EdgeAggregate(a, w, src, dst, _) => {
                let (x, wv) = (val(a), val(w));
                let mut res = Vec::with_capacity(2);
                if need(*a) {
                    let mut gx = Tensor::zeros(x.rows(), x.cols());
                    for (e, (&s, &d)) in src.iter().zip(dst.iter()).enumerate() {
                        let we = wv.data()[e];
                        for (o, v) in gx.row_mut(s).iter_mut().zip(g.row(d)) {
                            *o += we * v;
                        }
                    }
                    res.push((*a, gx));
                }
                if need(*w) {
                    let gw = src
                        .iter()
                        .zip(dst.iter())
                        .map(|(&s, &d)| crate::tensor::dot(g.row(d), x.row(s)))
                        .collect();
                    res.push((*w, Tensor::column(gw)));
                }
                res
            }
            Op::ScatterAdd(a, index, _) => {
                let x = val(a);
                let mut data = Vec::with_capacity(x.len());
                for &i in index.iter() {
                    data.extend_from_slice(g.row(i));
                }
                vec![(*a, Tensor::from_vec(x.rows(), x.cols(), data))]
            }
            Op::SegmentSoftmax(a, seg, segments) => {
                let mut dot = vec![0.0; *segments];
                for ((&s, y), gi) in seg.iter().zip(out.data()).zip(g.data()) {
                    dot[s] += y * gi;
                }
                let data = seg
                    .iter()
                    .zip(out.data())
                    .zip(g.data())
                    .map(|((&s, y), gi)| y * (gi - dot[s]))
                    .collect();
                vec![(*a, Tensor::column(data))]
            }
            Op::SliceCols(a, start, end) => {
                let x = val(a);
                let mut t = Tensor::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    t.row_mut(i)[*start..*end].copy_from_slice(g.row(i));
                }
                vec![(*a, t)]
            }
            Op::ConcatCols(a, b) => {
                let (x, y) = (val(a), val(b));
                let mut ga = Vec::with_capacity(x.len());
                let mut gb = Vec::with_capacity(y.len());
                for i in 0..g.rows() {
                    let row = g.row(i);
                    ga.extend_from_slice(&row[..x.cols()]);
                    gb.extend_from_slice(&row[x.cols()..]);
                }
                vec![
                    (*a, Tensor::from_vec(x.rows(), x.cols(), ga)),
                    (*b, Tensor::from_vec(y.rows(), y.cols(), gb)),
                ]
            }
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn mask(g: &Tensor, x: &Tensor, keep: impl Fn(f64) -> bool) -> Tensor {
    let data = g
        .data()
        .iter()
        .zip(x.data())
        .map(|(gi, xi)| if keep(*xi) { *gi } else { 0.0 })
        .collect();
    Tensor::from_vec(x.rows(), x.cols(), data)
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

/// Elementwise binary map with size-1 dimensions stretched.
fn broadcast(
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> std::result::Result<Tensor, String> {
    let err = || format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape());
    let rows = broadcast_dim(a.rows(), b.rows()).ok_or_else(err)?;
    let cols = broadcast_dim(a.cols(), b.cols()).ok_or_else(err)?;
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        return Ok(Tensor::from_vec(rows, cols, data));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let ia = if a.rows() == 1 { 0 } else { i };
        let ib = if b.rows() == 1 { 0 } else { i };
        for j in 0..cols {
            let ja = if a.cols() == 1 { 0 } else { j };
            let jb = if b.cols() == 1 { 0 } else { j };
            data.push(f(a.get(ia, ja), b.get(ib, jb)));
        }
    }
    Ok(Tensor::from_vec(rows, cols, data))
}

/// Sums a broadcast gradient back down to `shape`.
fn unbroadcast(g: Tensor, shape: (usize, usize)) -> Tensor {
    if g.shape() == shape {
        return g;
    }
    let mut out = Tensor::zeros(shape.0, shape.1);
    for i in 0..g.rows() {
        let oi = if shape.0 == 1 { 0 } else { i };
        for j in 0..g.cols() {
            let oj = if shape.1 == 1 { 0 } else { j };
            let v = out.get(oi, oj) + g.get(i, j);
            out.set(oi, oj, v);
        }
    }
    out
}

#[cfg(test)]
mod tests;
