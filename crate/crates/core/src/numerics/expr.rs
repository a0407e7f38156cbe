//! Computation graphs over [`Array`] values with reverse-mode gradients.
//!
//! An [`Expr`] is built once by appending nodes; operands always precede
//! the nodes that use them, so node order is a topological order. Leaves are
//! either named parameters, resolved against a [`Bindings`] store at
//! evaluation time, or constant arrays owned by the graph.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::array::{gemm, gemm_strided, Array, Precision};

/// Handle to a node inside one [`Expr`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Param(String),
    Const(Arc<Array>),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine { x: NodeId, scale: f64, shift: f64 },
    MatMul(NodeId, NodeId),
    Concat { parts: Vec<NodeId>, axis: usize },
    Slice { x: NodeId, axis: usize, start: usize, end: usize },
    GatherRows { x: NodeId, index: Arc<Vec<usize>> },
    Sigmoid(NodeId),
    LogSigmoid(NodeId),
    Tanh(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Cos(NodeId),
    Sum { x: NodeId, axis: Option<usize> },
    Mean(NodeId),
    Softmax { x: NodeId, axis: usize },
    Attention { q: NodeId, k: NodeId, v: NodeId, segments: Arc<Vec<usize>> },
    SegmentSum { x: NodeId, segments: Arc<Vec<usize>> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::Const(_) => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "multiply",
            Op::Affine { .. } => "affine",
            Op::MatMul(..) => "matmul",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::GatherRows { .. } => "gather-rows",
            Op::Sigmoid(_) => "sigmoid",
            Op::LogSigmoid(_) => "log-sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Log(_) => "log",
            Op::Exp(_) => "exp",
            Op::Cos(_) => "cos",
            Op::Sum { .. } => "sum",
            Op::Mean(_) => "mean",
            Op::Softmax { .. } => "softmax",
            Op::Attention { .. } => "scaled-dot-attention",
            Op::SegmentSum { .. } => "segment-sum",
        }
    }

    fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Param(_) | Op::Const(_) => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::Affine { x, .. }
            | Op::Slice { x, .. }
            | Op::GatherRows { x, .. }
            | Op::Sum { x, .. }
            | Op::Softmax { x, .. }
            | Op::SegmentSum { x, .. } => vec![*x],
            Op::Sigmoid(x)
            | Op::LogSigmoid(x)
            | Op::Tanh(x)
            | Op::Log(x)
            | Op::Exp(x)
            | Op::Cos(x)
            | Op::Mean(x) => vec![*x],
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("node {node}: parameter `{name}` is not bound")]
    UnboundLeaf { node: usize, name: String },
    #[error("node {node} ({op}): shape mismatch: {detail}")]
    ShapeMismatch { node: usize, op: &'static str, detail: String },
    #[error("gradient requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("node {node} ({op}) produced a non-finite value")]
    NonFinite { node: usize, op: &'static str },
}

/// Named parameter values an expression's leaves are resolved against.
pub trait Bindings {
    fn lookup(&self, name: &str) -> Option<&Array>;
}

impl Bindings for HashMap<String, Array> {
    fn lookup(&self, name: &str) -> Option<&Array> {
        self.get(name)
    }
}

impl Bindings for BTreeMap<String, Array> {
    fn lookup(&self, name: &str) -> Option<&Array> {
        self.get(name)
    }
}

/// Parameter name → gradient of the same shape.
pub type GradientMap = BTreeMap<String, Array>;

/// A computation graph under construction or ready for evaluation.
#[derive(Debug, Clone)]
pub struct Expr {
    nodes: Vec<Op>,
    precision: Precision,
}

impl Default for Expr {
    fn default() -> Self {
        Self::new(Precision::Fast)
    }
}

impl Expr {
    pub fn new(precision: Precision) -> Self {
        Self { nodes: Vec::new(), precision }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op) -> NodeId {
        debug_assert!(op.operands().iter().all(|o| o.0 < self.nodes.len()));
        self.nodes.push(op);
        NodeId(self.nodes.len() - 1)
    }

    pub fn param(&mut self, name: impl Into<String>) -> NodeId {
        self.push(Op::Param(name.into()))
    }

    pub fn constant(&mut self, value: Array) -> NodeId {
        self.push(Op::Const(Arc::new(value)))
    }

    pub fn constant_shared(&mut self, value: Arc<Array>) -> NodeId {
        self.push(Op::Const(value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    /// Elementwise product; either operand may be a one-element scalar.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    /// `x * scale + shift`, elementwise, with constant coefficients.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        self.push(Op::Affine { x, scale, shift })
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.affine(x, -1.0, 0.0)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    /// Concatenation of rank-2 operands along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> NodeId {
        self.push(Op::Concat { parts: parts.to_vec(), axis })
    }

    /// Half-open range `start..end` of a rank-2 operand along `axis`.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, end: usize) -> NodeId {
        self.push(Op::Slice { x, axis, start, end })
    }

    /// Selects rows of a rank-2 operand; rows may repeat.
    pub fn gather_rows(&mut self, x: NodeId, index: Vec<usize>) -> NodeId {
        self.push(Op::GatherRows { x, index: Arc::new(index) })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sigmoid(x))
    }

    /// Numerically stable `log σ(x)`.
    pub fn log_sigmoid(&mut self, x: NodeId) -> NodeId {
        self.push(Op::LogSigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Tanh(x))
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Log(x))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Exp(x))
    }

    pub fn cos(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Cos(x))
    }

    /// Sum of all entries (`None`) or along one axis of a rank-2 operand,
    /// keeping that axis with extent 1.
    pub fn sum(&mut self, x: NodeId, axis: Option<usize>) -> NodeId {
        self.push(Op::Sum { x, axis })
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Mean(x))
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> NodeId {
        self.push(Op::Softmax { x, axis })
    }

    /// Segmented single-head attention. Query row `s` attends over key and
    /// value rows `segments[s]..segments[s + 1]` with scores scaled by
    /// `1/√d`. An empty segment yields a zero output row.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, segments: Vec<usize>) -> NodeId {
        self.push(Op::Attention { q, k, v, segments: Arc::new(segments) })
    }

    /// Row `s` of the output is the sum of rows `segments[s]..segments[s + 1]`.
    pub fn segment_sum(&mut self, x: NodeId, segments: Vec<usize>) -> NodeId {
        self.push(Op::SegmentSum { x, segments: Arc::new(segments) })
    }

    /// `x·W + b` where `b` is a 1×n row, expressed without broadcasting by
    /// appending a ones column to `x` and stacking `b` under `W`.
    pub fn linear(&mut self, x: NodeId, rows: usize, w: NodeId, b: NodeId) -> NodeId {
        let ones = self.constant(Array::filled(&[rows, 1], 1.0));
        let xa = self.concat(&[x, ones], 1);
        let wb = self.concat(&[w, b], 0);
        self.matmul(xa, wb)
    }

    /// Names of all parameters referenced by this expression, deduplicated.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .nodes
            .iter()
            .filter_map(|op| match op {
                Op::Param(n) => Some(n.clone()),
                _ => None,
            })
            .collect();
        names.sort();
        names.dedup();
        names
    }

    /// Runs the forward pass, keeping every intermediate for a later
    /// backward pass.
    pub fn forward<'a, B: Bindings + ?Sized>(&'a self, bindings: &'a B) -> Result<Tape<'a>, NumericsError> {
        let mut values: Vec<Cow<'a, Array>> = Vec::with_capacity(self.nodes.len());
        let mut aux: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut needs_grad = vec![false; self.nodes.len()];
        for (i, op) in self.nodes.iter().enumerate() {
            needs_grad[i] = match op {
                Op::Param(_) => true,
                Op::Const(_) => false,
                _ => op.operands().iter().any(|o| needs_grad[o.0]),
            };
            let v = self.forward_node(i, op, &values, &mut aux[i], bindings)?;
            values.push(v);
        }
        Ok(Tape { expr: self, values, aux, needs_grad })
    }

    fn forward_node<'a, B: Bindings + ?Sized>(
        &'a self,
        i: usize,
        op: &'a Op,
        values: &[Cow<'a, Array>],
        aux: &mut Option<Vec<f64>>,
        bindings: &'a B,
    ) -> Result<Cow<'a, Array>, NumericsError> {
        let p = self.precision;
        let mismatch = |detail: String| NumericsError::ShapeMismatch { node: i, op: op.name(), detail };
        let val = |id: &NodeId| -> &Array { values[id.0].as_ref() };
        let out = match op {
            Op::Param(name) => {
                let a = bindings
                    .lookup(name)
                    .ok_or_else(|| NumericsError::UnboundLeaf { node: i, name: name.clone() })?;
                if !a.is_finite() {
                    return Err(NumericsError::NonFinite { node: i, op: op.name() });
                }
                return Ok(Cow::Borrowed(a));
            }
            Op::Const(a) => return Ok(Cow::Borrowed(a.as_ref())),
            Op::Add(a, b) | Op::Sub(a, b) => {
                let (x, y) = (val(a), val(b));
                if x.shape() != y.shape() {
                    return Err(mismatch(format!("{:?} vs {:?}", x.shape(), y.shape())));
                }
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let data = x.data().iter().zip(y.data()).map(|(u, v)| p.round(u + sign * v)).collect();
                Array::new(x.shape().to_vec(), data).expect("same shape")
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(a), val(b));
                if x.shape() == y.shape() {
                    let data = x.data().iter().zip(y.data()).map(|(u, v)| p.round(u * v)).collect();
                    Array::new(x.shape().to_vec(), data).expect("same shape")
                } else if x.len() == 1 {
                    let s = x.item();
                    y.map(|v| p.round(s * v))
                } else if y.len() == 1 {
                    let s = y.item();
                    x.map(|v| p.round(v * s))
                } else {
                    return Err(mismatch(format!("{:?} vs {:?}", x.shape(), y.shape())));
                }
            }
            Op::Affine { x, scale, shift } => val(x).map(|v| p.round(v * scale + shift)),
            Op::MatMul(a, b) => {
                let (x, y) = (val(a), val(b));
                if x.rank() != 2 || y.rank() != 2 || x.cols() != y.rows() {
                    return Err(mismatch(format!("{:?} x {:?}", x.shape(), y.shape())));
                }
                let (m, k, n) = (x.rows(), x.cols(), y.cols());
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, x.data(), y.data(), &mut c);
                p.round_all(&mut c);
                Array::matrix(m, n, c)
            }
            Op::Concat { parts, axis } => {
                if parts.is_empty() {
                    return Err(mismatch("no operands".into()));
                }
                let arrs: Vec<&Array> = parts.iter().map(val).collect();
                if arrs.iter().any(|a| a.rank() != 2) || *axis > 1 {
                    return Err(mismatch("concat needs rank-2 operands and axis 0 or 1".into()));
                }
                if *axis == 0 {
                    let cols = arrs[0].cols();
                    if arrs.iter().any(|a| a.cols() != cols) {
                        return Err(mismatch("column counts differ".into()));
                    }
                    let rows: usize = arrs.iter().map(|a| a.rows()).sum();
                    let mut data = Vec::with_capacity(rows * cols);
                    for a in &arrs {
                        data.extend_from_slice(a.data());
                    }
                    Array::matrix(rows, cols, data)
                } else {
                    let rows = arrs[0].rows();
                    if arrs.iter().any(|a| a.rows() != rows) {
                        return Err(mismatch(format!(
                            "row counts differ: {:?}",
                            arrs.iter().map(|a| a.rows()).collect::<Vec<_>>()
                        )));
                    }
                    let cols: usize = arrs.iter().map(|a| a.cols()).sum();
                    let mut data = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        for a in &arrs {
                            data.extend_from_slice(a.row_slice(r));
                        }
                    }
                    Array::matrix(rows, cols, data)
                }
            }
            Op::Slice { x, axis, start, end } => {
                let a = val(x);
                if a.rank() != 2 || *axis > 1 || start > end || *end > a.shape()[*axis] {
                    return Err(mismatch(format!("slice {start}..{end} on axis {axis} of {:?}", a.shape())));
                }
                if *axis == 0 {
                    let c = a.cols();
                    Array::matrix(end - start, c, a.data()[start * c..end * c].to_vec())
                } else {
                    let mut data = Vec::with_capacity(a.rows() * (end - start));
                    for r in 0..a.rows() {
                        data.extend_from_slice(&a.row_slice(r)[*start..*end]);
                    }
                    Array::matrix(a.rows(), end - start, data)
                }
            }
            Op::GatherRows { x, index } => {
                let a = val(x);
                if a.rank() != 2 {
                    return Err(mismatch(format!("gather needs rank 2, got {:?}", a.shape())));
                }
                if let Some(bad) = index.iter().find(|&&r| r >= a.rows()) {
                    return Err(mismatch(format!("row {bad} out of {}", a.rows())));
                }
                let c = a.cols();
                let mut data = Vec::with_capacity(index.len() * c);
                for &r in index.iter() {
                    data.extend_from_slice(a.row_slice(r));
                }
                Array::matrix(index.len(), c, data)
            }
            Op::Sigmoid(x) => val(x).map(|v| p.round(sigmoid(v))),
            Op::LogSigmoid(x) => val(x).map(|v| p.round(log_sigmoid(v))),
            Op::Tanh(x) => val(x).map(|v| p.round(v.tanh())),
            Op::Log(x) => val(x).map(|v| p.round(v.ln())),
            Op::Exp(x) => val(x).map(|v| p.round(v.exp())),
            Op::Cos(x) => val(x).map(|v| p.round(v.cos())),
            Op::Sum { x, axis } => {
                let a = val(x);
                match axis {
                    None => Array::scalar(p.round(a.data().iter().sum())),
                    Some(ax) => {
                        if a.rank() != 2 || *ax > 1 {
                            return Err(mismatch(format!("axis {ax} sum of {:?}", a.shape())));
                        }
                        let (r, c) = (a.rows(), a.cols());
                        if *ax == 0 {
                            let mut out = vec![0.0; c];
                            for i in 0..r {
                                for (o, v) in out.iter_mut().zip(a.row_slice(i)) {
                                    *o += v;
                                }
                            }
                            p.round_all(&mut out);
                            Array::matrix(1, c, out)
                        } else {
                            let mut out: Vec<f64> = (0..r).map(|i| a.row_slice(i).iter().sum()).collect();
                            p.round_all(&mut out);
                            Array::matrix(r, 1, out)
                        }
                    }
                }
            }
            Op::Mean(x) => {
                let a = val(x);
                if a.is_empty() {
                    return Err(mismatch("mean of empty array".into()));
                }
                Array::scalar(p.round(a.data().iter().sum::<f64>() / a.len() as f64))
            }
            Op::Softmax { x, axis } => {
                let a = val(x);
                let mut out = a.clone();
                for_each_lane(a.shape(), *axis, |idx| {
                    let m = idx.clone().map(|j| a.data()[j]).fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for j in idx.clone() {
                        let e = (a.data()[j] - m).exp();
                        out.data_mut()[j] = e;
                        total += e;
                    }
                    for j in idx {
                        out.data_mut()[j] = p.round(out.data()[j] / total);
                    }
                })
                .map_err(mismatch)?;
                out
            }
            Op::Attention { q, k, v, segments } => {
                let (qa, ka, va) = (val(q), val(k), val(v));
                check_segments(segments, qa.rows(), ka.rows()).map_err(&mismatch)?;
                if qa.rank() != 2 || ka.rank() != 2 || va.rank() != 2 || qa.cols() != ka.cols() || ka.rows() != va.rows()
                {
                    return Err(mismatch(format!(
                        "q {:?}, k {:?}, v {:?}",
                        qa.shape(),
                        ka.shape(),
                        va.shape()
                    )));
                }
                let d = qa.cols();
                let scale = 1.0 / (d as f64).sqrt();
                let dv = va.cols();
                let mut out = vec![0.0; qa.rows() * dv];
                let mut weights = vec![0.0; ka.rows()];
                for s in 0..qa.rows() {
                    let (lo, hi) = (segments[s], segments[s + 1]);
                    if lo == hi {
                        continue;
                    }
                    let qrow = qa.row_slice(s);
                    let mut m = f64::NEG_INFINITY;
                    for j in lo..hi {
                        let score = dot(qrow, ka.row_slice(j)) * scale;
                        weights[j] = score;
                        m = m.max(score);
                    }
                    let mut total = 0.0;
                    for w in &mut weights[lo..hi] {
                        *w = (*w - m).exp();
                        total += *w;
                    }
                    let orow = &mut out[s * dv..(s + 1) * dv];
                    for j in lo..hi {
                        weights[j] /= total;
                        let w = weights[j];
                        for (o, vv) in orow.iter_mut().zip(va.row_slice(j)) {
                            *o += w * vv;
                        }
                    }
                }
                p.round_all(&mut out);
                *aux = Some(weights);
                Array::matrix(qa.rows(), dv, out)
            }
            Op::SegmentSum { x, segments } => {
                let a = val(x);
                let nseg = segments.len().saturating_sub(1);
                check_segments(segments, nseg, a.rows()).map_err(&mismatch)?;
                let c = a.cols();
                let mut out = vec![0.0; nseg * c];
                for s in 0..nseg {
                    let orow = &mut out[s * c..(s + 1) * c];
                    for j in segments[s]..segments[s + 1] {
                        for (o, v) in orow.iter_mut().zip(a.row_slice(j)) {
                            *o += v;
                        }
                    }
                }
                p.round_all(&mut out);
                Array::matrix(nseg, c, out)
            }
        };
        if !out.is_finite() {
            return Err(NumericsError::NonFinite { node: i, op: op.name() });
        }
        Ok(Cow::Owned(out))
    }
}

fn check_segments(segments: &[usize], queries: usize, rows: usize) -> Result<(), String> {
    if segments.len() != queries + 1 {
        return Err(format!("{} segment bounds for {queries} queries", segments.len()));
    }
    if segments[0] != 0 || segments[queries] != rows || segments.windows(2).any(|w| w[0] > w[1]) {
        return Err(format!("segment bounds do not partition {rows} rows"));
    }
    Ok(())
}

/// Calls `f` with the flat index range of every lane along `axis`.
fn for_each_lane(
    shape: &[usize],
    axis: usize,
    mut f: impl FnMut(std::iter::StepBy<std::ops::Range<usize>>),
) -> Result<(), String> {
    match (shape.len(), axis) {
        (1, 0) => f((0..shape[0]).step_by(1)),
        (2, 1) => {
            let (r, c) = (shape[0], shape[1]);
            for i in 0..r {
                f((i * c..(i + 1) * c).step_by(1));
            }
        }
        (2, 0) => {
            let (r, c) = (shape[0], shape[1]);
            for j in 0..c {
                f((j..r * c).step_by(c));
            }
        }
        _ => return Err(format!("softmax axis {axis} on shape {shape:?}")),
    }
    Ok(())
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.exp().ln_1p()
}

/// `log σ(x)` via `−softplus(−x)` for `x ≥ 0` and `x − softplus(x)` otherwise.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -softplus(-x)
    } else {
        x - softplus(x)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Forward values of one evaluation, ready for a backward pass.
pub struct Tape<'a> {
    expr: &'a Expr,
    values: Vec<Cow<'a, Array>>,
    aux: Vec<Option<Vec<f64>>>,
    needs_grad: Vec<bool>,
}

impl<'a> Tape<'a> {
    pub fn value(&self, id: NodeId) -> &Array {
        self.values[id.0].as_ref()
    }

    /// Gradients of the scalar at `root` with respect to the named
    /// parameters. Parameters the root does not depend on get zeros shaped
    /// like their binding.
    pub fn backward<B: Bindings + ?Sized>(
        &self,
        root: NodeId,
        wrt: &[String],
        bindings: &B,
    ) -> Result<GradientMap, NumericsError> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(NumericsError::NonScalarRoot { shape: rv.shape().to_vec() });
        }
        let p = self.expr.precision;
        let mut grads: Vec<Option<Array>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Array::new(rv.shape().to_vec(), vec![1.0]).expect("scalar"));
        let mut out = GradientMap::new();
        for name in wrt {
            let b = bindings
                .lookup(name)
                .ok_or_else(|| NumericsError::UnboundLeaf { node: usize::MAX, name: name.clone() })?;
            out.insert(name.clone(), Array::zeros(b.shape()));
        }
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.needs_grad[i] {
                continue;
            }
            let op = &self.expr.nodes[i];
            if let Op::Param(name) = op {
                if let Some(acc) = out.get_mut(name) {
                    for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += v;
                    }
                }
                continue;
            }
            self.backward_node(i, op, g, &mut grads, p);
        }
        for a in out.values_mut() {
            p.round_all(a.data_mut());
        }
        Ok(out)
    }

    fn backward_node(&self, i: usize, op: &Op, g: Array, grads: &mut [Option<Array>], p: Precision) {
        let val = |id: NodeId| -> &Array { self.values[id.0].as_ref() };
        let out = self.values[i].as_ref();
        let acc = |id: NodeId, delta: Array, grads: &mut [Option<Array>]| {
            if !self.needs_grad[id.0] {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => {
                    for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                        *e += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        let elementwise = |x: &Array, f: &dyn Fn(f64, f64) -> f64| -> Array {
            let data = x.data().iter().zip(out.data()).zip(g.data()).map(|((&xv, &yv), &gv)| gv * f(xv, yv));
            let mut a = Array::new(x.shape().to_vec(), data.collect()).expect("same shape");
            p.round_all(a.data_mut());
            a
        };
        match op {
            Op::Param(_) | Op::Const(_) => {}
            Op::Add(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g, grads);
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.map(|v| -v), grads);
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let grad_for = |this: &Array, other: &Array| -> Array {
                    if this.shape() == other.shape() {
                        let d = g.data().iter().zip(other.data()).map(|(gv, o)| p.round(gv * o)).collect();
                        Array::new(this.shape().to_vec(), d).expect("same shape")
                    } else if this.len() == 1 {
                        let s: f64 = g.data().iter().zip(other.data()).map(|(gv, o)| gv * o).sum();
                        Array::new(this.shape().to_vec(), vec![p.round(s)]).expect("scalar")
                    } else {
                        let s = other.item();
                        g.map(|gv| p.round(gv * s))
                    }
                };
                let ga = grad_for(x, y);
                let gb = grad_for(y, x);
                acc(*a, ga, grads);
                acc(*b, gb, grads);
            }
            Op::Affine { x, scale, .. } => acc(*x, g.map(|v| p.round(v * scale)), grads),
            Op::MatMul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let (m, k, n) = (x.rows(), x.cols(), y.cols());
                if self.needs_grad[a.0] {
                    // dA = dC · Bᵀ
                    let mut da = vec![0.0; m * k];
                    gemm_strided(m, n, k, g.data(), (n as isize, 1), y.data(), (1, n as isize), &mut da, 0.0);
                    p.round_all(&mut da);
                    acc(*a, Array::matrix(m, k, da), grads);
                }
                if self.needs_grad[b.0] {
                    // dB = Aᵀ · dC
                    let mut db = vec![0.0; k * n];
                    gemm_strided(k, m, n, x.data(), (1, k as isize), g.data(), (n as isize, 1), &mut db, 0.0);
                    p.round_all(&mut db);
                    acc(*b, Array::matrix(k, n, db), grads);
                }
            }
            Op::Concat { parts, axis } => {
                let mut offset = 0;
                for part in parts {
                    let a = val(*part);
                    let (r, c) = (a.rows(), a.cols());
                    if self.needs_grad[part.0] {
                        let piece = if *axis == 0 {
                            let gc = g.cols();
                            Array::matrix(r, c, g.data()[offset * gc..(offset + r) * gc].to_vec())
                        } else {
                            let mut d = Vec::with_capacity(r * c);
                            for row in 0..r {
                                d.extend_from_slice(&g.row_slice(row)[offset..offset + c]);
                            }
                            Array::matrix(r, c, d)
                        };
                        acc(*part, piece, grads);
                    }
                    offset += if *axis == 0 { r } else { c };
                }
            }
            Op::Slice { x, axis, start, end } => {
                let a = val(*x);
                let mut d = Array::zeros(a.shape());
                let c = a.cols();
                if *axis == 0 {
                    d.data_mut()[start * c..end * c].copy_from_slice(g.data());
                } else {
                    let w = end - start;
                    for r in 0..a.rows() {
                        d.row_slice_mut(r)[*start..*end].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                    }
                }
                acc(*x, d, grads);
            }
            Op::GatherRows { x, index } => {
                let a = val(*x);
                let mut d = Array::zeros(a.shape());
                for (gi, &r) in index.iter().enumerate() {
                    for (dv, gv) in d.row_slice_mut(r).iter_mut().zip(g.row_slice(gi)) {
                        *dv += gv;
                    }
                }
                p.round_all(d.data_mut());
                acc(*x, d, grads);
            }
            Op::Sigmoid(x) => acc(*x, elementwise(val(*x), &|_, y| y * (1.0 - y)), grads),
            Op::LogSigmoid(x) => acc(*x, elementwise(val(*x), &|xv, _| sigmoid(-xv)), grads),
            Op::Tanh(x) => acc(*x, elementwise(val(*x), &|_, y| 1.0 - y * y), grads),
            Op::Log(x) => acc(*x, elementwise(val(*x), &|xv, _| 1.0 / xv), grads),
            Op::Exp(x) => acc(*x, elementwise(val(*x), &|_, y| y), grads),
            Op::Cos(x) => acc(*x, elementwise(val(*x), &|xv, _| -xv.sin()), grads),
            Op::Sum { x, axis } => {
                let a = val(*x);
                let d = match axis {
                    None => Array::filled(a.shape(), g.item()),
                    Some(0) => {
                        let mut d = Array::zeros(a.shape());
                        for r in 0..a.rows() {
                            d.row_slice_mut(r).copy_from_slice(g.data());
                        }
                        d
                    }
                    Some(_) => {
                        let mut d = Array::zeros(a.shape());
                        for r in 0..a.rows() {
                            let gv = g.data()[r];
                            d.row_slice_mut(r).iter_mut().for_each(|v| *v = gv);
                        }
                        d
                    }
                };
                acc(*x, d, grads);
            }
            Op::Mean(x) => {
                let a = val(*x);
                acc(*x, Array::filled(a.shape(), p.round(g.item() / a.len() as f64)), grads);
            }
            Op::Softmax { x, axis } => {
                let mut d = Array::zeros(out.shape());
                let _ = for_each_lane(out.shape(), *axis, |idx| {
                    let s: f64 = idx.clone().map(|j| g.data()[j] * out.data()[j]).sum();
                    for j in idx {
                        d.data_mut()[j] = p.round(out.data()[j] * (g.data()[j] - s));
                    }
                });
                acc(*x, d, grads);
            }
            Op::Attention { q, k, v, segments } => {
                let (qa, ka, va) = (val(*q), val(*k), val(*v));
                let weights = self.aux[i].as_ref().expect("attention weights");
                let d = qa.cols();
                let scale = 1.0 / (d as f64).sqrt();
                let mut dq = Array::zeros(qa.shape());
                let mut dk = Array::zeros(ka.shape());
                let mut dvv = Array::zeros(va.shape());
                let mut dw = Vec::new();
                for s in 0..qa.rows() {
                    let (lo, hi) = (segments[s], segments[s + 1]);
                    if lo == hi {
                        continue;
                    }
                    let gs = g.row_slice(s);
                    dw.clear();
                    for j in lo..hi {
                        dw.push(dot(gs, va.row_slice(j)));
                        let w = weights[j];
                        for (o, gv) in dvv.row_slice_mut(j).iter_mut().zip(gs) {
                            *o += w * gv;
                        }
                    }
                    let mix: f64 = (lo..hi).map(|j| weights[j] * dw[j - lo]).sum();
                    let qrow = qa.row_slice(s).to_vec();
                    for j in lo..hi {
                        let ds = weights[j] * (dw[j - lo] - mix) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for (o, kv) in dq.row_slice_mut(s).iter_mut().zip(ka.row_slice(j)) {
                            *o += ds * kv;
                        }
                        for (o, qv) in dk.row_slice_mut(j).iter_mut().zip(&qrow) {
                            *o += ds * qv;
                        }
                    }
                }
                for a in [&mut dq, &mut dk, &mut dvv] {
                    p.round_all(a.data_mut());
                }
                acc(*q, dq, grads);
                acc(*k, dk, grads);
                acc(*v, dvv, grads);
            }
            Op::SegmentSum { x, segments } => {
                let a = val(*x);
                let mut d = Array::zeros(a.shape());
                for s in 0..segments.len() - 1 {
                    for j in segments[s]..segments[s + 1] {
                        d.row_slice_mut(j).copy_from_slice(g.row_slice(s));
                    }
                }
                acc(*x, d, grads);
            }
        }
    }
}

/// Forward value of `root` under `bindings`.
pub fn evaluate<B: Bindings + ?Sized>(expr: &Expr, root: NodeId, bindings: &B) -> Result<Array, NumericsError> {
    let tape = expr.forward(bindings)?;
    Ok(tape.value(root).clone())
}

/// Reverse-mode gradient of the scalar at `root`.
pub fn gradient<B: Bindings + ?Sized>(
    expr: &Expr,
    root: NodeId,
    bindings: &B,
    wrt: &[String],
) -> Result<GradientMap, NumericsError> {
    expr.forward(bindings)?.backward(root, wrt, bindings)
}
