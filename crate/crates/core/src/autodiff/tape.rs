//! Tape-based reverse-mode automatic differentiation over rank-2 tensors.
//!
//! A [`Tape`] records every primitive in evaluation order, so node ids are a
//! topological order by construction. [`Tape::backward`] walks the record once
//! in reverse and leaves the tape untouched: calling it twice on the same loss
//! yields identical gradients.

use super::tensor::Tensor;
use thiserror::Error;

/// Arguments of `log` and the denominator of `div` are clamped to this floor.
pub const NUMERIC_FLOOR: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("shape mismatch in `{op}`: {shapes:?}")]
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("`{op}` expects {expected} input(s), got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value produced by `{op}` at node {node}")]
    NonFinite { node: usize, op: &'static str },
    #[error("non-finite gradient reaching node {node} (`{op}`)")]
    NonFiniteGradient { node: usize, op: &'static str },
    #[error("invalid argument to `{op}`: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
}

pub type AdResult<T> = Result<T, AdError>;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operations understood by the tape.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Leaf,
    MatMul,
    /// Elementwise with row/column broadcasting.
    Add,
    Sub,
    Mul,
    /// `a / max(b, NUMERIC_FLOOR)`, broadcasting.
    Div,
    Scale(f64),
    AddScalar(f64),
    Sigmoid,
    Tanh,
    Exp,
    /// `ln(max(x, NUMERIC_FLOOR))`.
    Log,
    Abs,
    ClampMin(f64),
    /// Row-wise softmax.
    Softmax,
    /// Sum of all entries, `[1, 1]`.
    Sum,
    /// Per-row sum, `[rows, 1]`.
    SumCols,
    ConcatCols,
    ConcatRows,
    SliceCols { start: usize, len: usize },
    /// Identity forward, `-lambda * upstream` backward.
    GradReversal(f64),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Abs => "abs",
            Op::ClampMin(_) => "clamp_min",
            Op::Softmax => "softmax",
            Op::Sum => "sum",
            Op::SumCols => "sum_cols",
            Op::ConcatCols => "concat_cols",
            Op::ConcatRows => "concat_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::GradReversal(_) => "gradient_reversal",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<Var>,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node that requires one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `var`; exact zeros if the loss does not depend on it.
    pub fn get(&self, var: Var) -> Tensor {
        match self.grads.get(var.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn broadcast_shape(a: &Tensor, b: &Tensor) -> Option<(usize, usize)> {
    let dim = |x: usize, y: usize| {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    Some((dim(a.rows(), b.rows())?, dim(a.cols(), b.cols())?))
}

fn broadcast_apply(a: &Tensor, b: &Tensor, rows: usize, cols: usize, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        let values = a.values().iter().zip(b.values()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::matrix(rows, cols, values);
    }
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let ai = if a.rows() == 1 { 0 } else { i };
        let bi = if b.rows() == 1 { 0 } else { i };
        for j in 0..cols {
            let aj = if a.cols() == 1 { 0 } else { j };
            let bj = if b.cols() == 1 { 0 } else { j };
            out.push(f(a.get(ai, aj), b.get(bi, bj)));
        }
    }
    Tensor::matrix(rows, cols, out)
}

/// Sums `grad` down to `rows x cols`, undoing broadcasting.
fn reduce_to(grad: Tensor, rows: usize, cols: usize) -> Tensor {
    if grad.rows() == rows && grad.cols() == cols {
        return grad;
    }
    let mut out = Tensor::zeros(rows, cols);
    for i in 0..grad.rows() {
        let oi = if rows == 1 { 0 } else { i };
        for j in 0..grad.cols() {
            let oj = if cols == 1 { 0 } else { j };
            let v = out.get(oi, oj) + grad.get(i, j);
            out.set(oi, oj, v);
        }
    }
    out
}

/// Value of the broadcast operand `t` aligned with output position `(i, j)`.
#[inline]
fn bget(t: &Tensor, i: usize, j: usize) -> f64 {
    let r = if t.rows() == 1 { 0 } else { i };
    let c = if t.cols() == 1 { 0 } else { j };
    t.get(r, c)
}

fn sigmoid(x: f64) -> f64 {
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

    /// Trainable leaf: gradients flow into it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, Vec::new(), value, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, Vec::new(), value, false)
    }

    fn push(&mut self, op: Op, inputs: Vec<Var>, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            inputs,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn mismatch(&self, op: &Op, inputs: &[Var]) -> AdError {
        AdError::ShapeMismatch {
            op: op.name(),
            shapes: inputs.iter().map(|v| self.value(*v).shape().to_vec()).collect(),
        }
    }

    /// Records `op` applied to `inputs` and returns the output node.
    pub fn apply(&mut self, op: Op, inputs: &[Var]) -> AdResult<Var> {
        let arity = match op {
            Op::Leaf => {
                return Err(AdError::InvalidArgument {
                    op: "leaf",
                    reason: "use `param` or `constant` to create leaves".into(),
                })
            }
            Op::MatMul | Op::Add | Op::Sub | Op::Mul | Op::Div => Some(2),
            Op::ConcatCols | Op::ConcatRows => None,
            _ => Some(1),
        };
        if let Some(n) = arity {
            if inputs.len() != n {
                return Err(AdError::Arity {
                    op: op.name(),
                    expected: n,
                    got: inputs.len(),
                });
            }
        } else if inputs.is_empty() {
            return Err(AdError::Arity {
                op: op.name(),
                expected: 1,
                got: 0,
            });
        }
        if let Op::GradReversal(l) = op {
            if !(l >= 0.0) {
                return Err(AdError::InvalidArgument {
                    op: op.name(),
                    reason: format!("lambda must be >= 0, got {l}"),
                });
            }
        }

        let value = self.eval(&op, inputs)?;
        if !value.is_finite() {
            return Err(AdError::NonFinite {
                node: self.nodes.len(),
                op: op.name(),
            });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(op, inputs.to_vec(), value, needs_grad))
    }

    fn eval(&self, op: &Op, inputs: &[Var]) -> AdResult<Tensor> {
        let x = self.value(inputs[0]);
        let out = match op {
            Op::Leaf => unreachable!(),
            Op::MatMul => {
                let y = self.value(inputs[1]);
                if x.cols() != y.rows() {
                    return Err(self.mismatch(op, inputs));
                }
                x.matmul(y)
            }
            Op::Add | Op::Sub | Op::Mul | Op::Div => {
                let y = self.value(inputs[1]);
                let (r, c) = broadcast_shape(x, y).ok_or_else(|| self.mismatch(op, inputs))?;
                match op {
                    Op::Add => broadcast_apply(x, y, r, c, |a, b| a + b),
                    Op::Sub => broadcast_apply(x, y, r, c, |a, b| a - b),
                    Op::Mul => broadcast_apply(x, y, r, c, |a, b| a * b),
                    _ => broadcast_apply(x, y, r, c, |a, b| a / b.max(NUMERIC_FLOOR)),
                }
            }
            Op::Scale(s) => x.map(|v| v * s),
            Op::AddScalar(s) => x.map(|v| v + s),
            Op::Sigmoid => x.map(sigmoid),
            Op::Tanh => x.map(f64::tanh),
            Op::Exp => x.map(f64::exp),
            Op::Log => x.map(|v| v.max(NUMERIC_FLOOR).ln()),
            Op::Abs => x.map(f64::abs),
            Op::ClampMin(f) => x.map(|v| v.max(*f)),
            Op::Softmax => {
                let (r, c) = (x.rows(), x.cols());
                let mut out = Vec::with_capacity(r * c);
                for i in 0..r {
                    let row = &x.values()[i * c..(i + 1) * c];
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    out.extend(exps.into_iter().map(|e| e / z));
                }
                Tensor::matrix(r, c, out)
            }
            Op::Sum => Tensor::scalar(x.sum()),
            Op::SumCols => {
                let c = x.cols();
                Tensor::column(x.values().chunks(c).map(|row| row.iter().sum()).collect())
            }
            Op::ConcatCols => {
                let rows = x.rows();
                if inputs.iter().any(|v| self.value(*v).rows() != rows) {
                    return Err(self.mismatch(op, inputs));
                }
                let total: usize = inputs.iter().map(|v| self.value(*v).cols()).sum();
                let mut out = Vec::with_capacity(rows * total);
                for i in 0..rows {
                    for v in inputs {
                        let t = self.value(*v);
                        out.extend_from_slice(&t.values()[i * t.cols()..(i + 1) * t.cols()]);
                    }
                }
                Tensor::matrix(rows, total, out)
            }
            Op::ConcatRows => {
                let cols = x.cols();
                if inputs.iter().any(|v| self.value(*v).cols() != cols) {
                    return Err(self.mismatch(op, inputs));
                }
                let total: usize = inputs.iter().map(|v| self.value(*v).rows()).sum();
                let mut out = Vec::with_capacity(total * cols);
                for v in inputs {
                    out.extend_from_slice(self.value(*v).values());
                }
                Tensor::matrix(total, cols, out)
            }
            Op::SliceCols { start, len } => {
                if start + len > x.cols() || *len == 0 {
                    return Err(self.mismatch(op, inputs));
                }
                let c = x.cols();
                let mut out = Vec::with_capacity(x.rows() * len);
                for i in 0..x.rows() {
                    out.extend_from_slice(&x.values()[i * c + start..i * c + start + len]);
                }
                Tensor::matrix(x.rows(), *len, out)
            }
            Op::GradReversal(_) => x.clone(),
        };
        Ok(out)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> AdResult<Gradients> {
        let loss_shape = self.value(loss).shape();
        if loss_shape != [1, 1] {
            return Err(AdError::NonScalarLoss(loss_shape.to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..n).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if !g.is_finite() {
                return Err(AdError::NonFiniteGradient {
                    node: id,
                    op: node.op.name(),
                });
            }
            for (slot, contribution) in self.input_grads(node, g) {
                let target = node.inputs[slot];
                if !self.nodes[target.0].needs_grad {
                    continue;
                }
                match &mut grads[target.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    empty => *empty = Some(contribution),
                }
            }
        }

        for (id, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(AdError::NonFiniteGradient {
                        node: id,
                        op: self.nodes[id].op.name(),
                    });
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| (n.value.rows(), n.value.cols())).collect();
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, node: &Node, slot: usize) -> bool {
        self.nodes[node.inputs[slot].0].needs_grad
    }

    fn input_grads(&self, node: &Node, g: Tensor) -> Vec<(usize, Tensor)> {
        let x = self.value(node.inputs[0]);
        let y = &node.value;
        let mut out = Vec::with_capacity(node.inputs.len());
        match &node.op {
            Op::Leaf => {}
            Op::MatMul => {
                let b = self.value(node.inputs[1]);
                if self.wants(node, 0) {
                    out.push((0, g.matmul_t(b)));
                }
                if self.wants(node, 1) {
                    out.push((1, x.t_matmul(&g)));
                }
            }
            Op::Add | Op::Sub => {
                let b = self.value(node.inputs[1]);
                let sign = if node.op == Op::Add { 1.0 } else { -1.0 };
                if self.wants(node, 0) {
                    out.push((0, reduce_to(g.clone(), x.rows(), x.cols())));
                }
                if self.wants(node, 1) {
                    let gb = if sign < 0.0 { g.map(|v| -v) } else { g };
                    out.push((1, reduce_to(gb, b.rows(), b.cols())));
                }
            }
            Op::Mul | Op::Div => {
                let b = self.value(node.inputs[1]);
                let (r, c) = (g.rows(), g.cols());
                let is_div = node.op == Op::Div;
                if self.wants(node, 0) {
                    let mut ga = Vec::with_capacity(r * c);
                    for i in 0..r {
                        for j in 0..c {
                            let bv = bget(b, i, j);
                            let d = if is_div { 1.0 / bv.max(NUMERIC_FLOOR) } else { bv };
                            ga.push(g.get(i, j) * d);
                        }
                    }
                    out.push((0, reduce_to(Tensor::matrix(r, c, ga), x.rows(), x.cols())));
                }
                if self.wants(node, 1) {
                    let mut gb = Vec::with_capacity(r * c);
                    for i in 0..r {
                        for j in 0..c {
                            let av = bget(x, i, j);
                            let bv = bget(b, i, j);
                            let d = if is_div {
                                if bv > NUMERIC_FLOOR {
                                    -av / (bv * bv)
                                } else {
                                    0.0
                                }
                            } else {
                                av
                            };
                            gb.push(g.get(i, j) * d);
                        }
                    }
                    out.push((1, reduce_to(Tensor::matrix(r, c, gb), b.rows(), b.cols())));
                }
            }
            Op::Scale(s) => out.push((0, g.map(|v| v * s))),
            Op::AddScalar(_) => out.push((0, g)),
            Op::Sigmoid => out.push((0, zip_map(&g, y, |gv, yv| gv * yv * (1.0 - yv)))),
            Op::Tanh => out.push((0, zip_map(&g, y, |gv, yv| gv * (1.0 - yv * yv)))),
            Op::Exp => out.push((0, zip_map(&g, y, |gv, yv| gv * yv))),
            Op::Log => out.push((
                0,
                zip_map(&g, x, |gv, xv| if xv > NUMERIC_FLOOR { gv / xv } else { 0.0 }),
            )),
            Op::Abs => out.push((0, zip_map(&g, x, |gv, xv| gv * sign(xv)))),
            Op::ClampMin(f) => out.push((0, zip_map(&g, x, |gv, xv| if xv > *f { gv } else { 0.0 }))),
            Op::Softmax => {
                let (r, c) = (y.rows(), y.cols());
                let mut gx = Vec::with_capacity(r * c);
                for i in 0..r {
                    let yr = &y.values()[i * c..(i + 1) * c];
                    let gr = &g.values()[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    gx.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
                }
                out.push((0, Tensor::matrix(r, c, gx)));
            }
            Op::Sum => out.push((0, Tensor::filled(x.rows(), x.cols(), g.item()))),
            Op::SumCols => {
                let (r, c) = (x.rows(), x.cols());
                let mut gx = Vec::with_capacity(r * c);
                for i in 0..r {
                    gx.extend(std::iter::repeat_n(g.values()[i], c));
                }
                out.push((0, Tensor::matrix(r, c, gx)));
            }
            Op::ConcatCols => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for (slot, v) in node.inputs.iter().enumerate() {
                    let c = self.value(*v).cols();
                    if self.wants(node, slot) {
                        let mut part = Vec::with_capacity(rows * c);
                        for i in 0..rows {
                            part.extend_from_slice(&g.values()[i * total + offset..i * total + offset + c]);
                        }
                        out.push((slot, Tensor::matrix(rows, c, part)));
                    }
                    offset += c;
                }
            }
            Op::ConcatRows => {
                let cols = g.cols();
                let mut offset = 0;
                for (slot, v) in node.inputs.iter().enumerate() {
                    let r = self.value(*v).rows();
                    if self.wants(node, slot) {
                        let part = g.values()[offset * cols..(offset + r) * cols].to_vec();
                        out.push((slot, Tensor::matrix(r, cols, part)));
                    }
                    offset += r;
                }
            }
            Op::SliceCols { start, len } => {
                let (r, c) = (x.rows(), x.cols());
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    gx[i * c + start..i * c + start + len].copy_from_slice(&g.values()[i * len..(i + 1) * len]);
                }
                out.push((0, Tensor::matrix(r, c, gx)));
            }
            Op::GradReversal(lambda) => out.push((0, g.map(|v| -lambda * v))),
        }
        out
    }

    // Convenience wrappers. Each records one primitive.

    pub fn matmul(&mut self, a: Var, b: Var) -> AdResult<Var> {
        self.apply(Op::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> AdResult<Var> {
        self.apply(Op::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> AdResult<Var> {
        self.apply(Op::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> AdResult<Var> {
        self.apply(Op::Mul, &[a, b])
    }
    pub fn div(&mut self, a: Var, b: Var) -> AdResult<Var> {
        self.apply(Op::Div, &[a, b])
    }
    pub fn scale(&mut self, a: Var, s: f64) -> AdResult<Var> {
        self.apply(Op::Scale(s), &[a])
    }
    pub fn add_scalar(&mut self, a: Var, s: f64) -> AdResult<Var> {
        self.apply(Op::AddScalar(s), &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> AdResult<Var> {
        self.apply(Op::Sigmoid, &[a])
    }
    pub fn tanh(&mut self, a: Var) -> AdResult<Var> {
        self.apply(Op::Tanh, &[a])
    }
    pub fn exp(&mut self, a: Var) -> AdResult<Var> {
        self.apply(Op::Exp, &[a])
    }
    pub fn log(&mut self, a: Var) -> AdResult<Var> {
        self.apply(Op::Log, &[a])
    }
    pub fn abs(&mut self, a: Var) -> AdResult<Var> {
        self.apply(Op::Abs, &[a])
    }
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> AdResult<Var> {
        self.apply(Op::ClampMin(floor), &[a])
    }
    pub fn softmax(&mut self, a: Var) -> AdResult<Var> {
        self.apply(Op::Softmax, &[a])
    }
    pub fn sum(&mut self, a: Var) -> AdResult<Var> {
        self.apply(Op::Sum, &[a])
    }
    pub fn sum_cols(&mut self, a: Var) -> AdResult<Var> {
        self.apply(Op::SumCols, &[a])
    }
    pub fn concat_cols(&mut self, parts: &[Var]) -> AdResult<Var> {
        self.apply(Op::ConcatCols, parts)
    }
    pub fn concat_rows(&mut self, parts: &[Var]) -> AdResult<Var> {
        self.apply(Op::ConcatRows, parts)
    }
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> AdResult<Var> {
        self.apply(Op::SliceCols { start, len }, &[a])
    }
    pub fn gradient_reversal(&mut self, a: Var, lambda: f64) -> AdResult<Var> {
        self.apply(Op::GradReversal(lambda), &[a])
    }
    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> AdResult<Var> {
        let neg = self.scale(a, -1.0)?;
        self.add_scalar(neg, 1.0)
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn zip_map(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let values = g.values().iter().zip(other.values()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::matrix(g.rows(), g.cols(), values)
}
