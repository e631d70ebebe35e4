//! Reverse-mode gradient tape over a fixed set of matrix primitives.
//!
//! Every op is evaluated eagerly and appended to the tape, so node ids are
//! already in topological order. [`GradTape::backward`] walks the tape once in
//! reverse and returns the gradient of a scalar node with respect to every
//! variable leaf.

use crate::error::{Error, Result};
use crate::tensor::{Mask, Tensor2};

/// Handle to a value recorded on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Sigmoid,
    Softplus,
    /// Tanh approximation of GELU.
    Gelu,
    Relu,
    Log,
    Exp,
    Sqrt,
    Square,
    /// `x^p` for `x ≥ 0`.
    Powf(f64),
    /// Clamp into `[lo, hi]`; gradient passes only inside the interval.
    Clamp(f64, f64),
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Unary {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Sigmoid => sigmoid(x),
            Unary::Softplus => softplus(x),
            Unary::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()),
            Unary::Relu => x.max(0.0),
            Unary::Log => x.ln(),
            Unary::Exp => x.exp(),
            Unary::Sqrt => x.sqrt(),
            Unary::Square => x * x,
            Unary::Powf(p) => x.powf(p),
            Unary::Clamp(lo, hi) => x.clamp(lo, hi),
        }
    }

    /// Derivative at input `x`, given the forward output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Softplus => sigmoid(x),
            Unary::Gelu => {
                let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
            }
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Log => 1.0 / x,
            Unary::Exp => y,
            Unary::Sqrt => 0.5 / y,
            Unary::Square => 2.0 * x,
            Unary::Powf(p) => {
                if p == 0.0 {
                    0.0
                } else {
                    p * x.powf(p - 1.0)
                }
            }
            Unary::Clamp(lo, hi) => {
                if (lo..=hi).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Min(NodeId, NodeId),
    Max(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    AddRow(NodeId, NodeId),
    SoftmaxRows(NodeId),
    Unary(NodeId, Unary),
    MaskedFill(NodeId, Mask),
    SumAll(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceRows(NodeId, usize),
    SliceCols(NodeId, usize),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::MatMulT(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::Min(a, b)
            | Op::Max(a, b)
            | Op::AddRow(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::SoftmaxRows(a)
            | Op::Unary(a, _)
            | Op::MaskedFill(a, _)
            | Op::SumAll(a)
            | Op::SliceRows(a, _)
            | Op::SliceCols(a, _) => vec![*a],
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Min(..) => "min",
            Op::Max(..) => "max",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::AddRow(..) => "add_row",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::Unary(..) => "unary",
            Op::MaskedFill(..) => "masked_fill",
            Op::SumAll(..) => "sum",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::LayerNorm { .. } => "layer_norm",
        }
    }
}

struct Node {
    value: Tensor2,
    op: Op,
    /// True for variable leaves and anything downstream of one.
    needs_grad: bool,
}

/// Records primitive ops for a single forward/backward pass.
#[derive(Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every variable leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    /// Gradient for `id`; `None` for constants and non-leaf nodes.
    pub fn get(&self, id: NodeId) -> Option<&Tensor2> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor2> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

/// Value assigned to masked-out attention logits. Finite, yet `exp` of it
/// (relative to any finite row max) underflows to exactly zero.
pub const MASKED_LOGIT: f64 = -1.0e300;

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor2 {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    /// Input ids of a node, in argument order.
    pub fn inputs(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.inputs()
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }

    fn push(&mut self, value: Tensor2, op: Op) -> NodeId {
        let needs_grad = match &op {
            Op::Leaf => false,
            other => other.inputs().iter().any(|i| self.nodes[i.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A differentiable leaf.
    pub fn var(&mut self, value: Tensor2) -> NodeId {
        let id = self.push(value, Op::Leaf);
        self.nodes[id.0].needs_grad = true;
        id
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor2) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(v, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), "div", |x, y| x / y)?;
        Ok(self.push(v, Op::Div(a, b)))
    }

    pub fn min(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), "min", f64::min)?;
        Ok(self.push(v, Op::Min(a, b)))
    }

    pub fn max(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), "max", f64::max)?;
        Ok(self.push(v, Op::Max(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).scale(k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).map(|x| x + k);
        self.push(v, Op::AddScalar(a))
    }

    /// Adds a `1 × cols` row vector to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(Error::Shape {
                op: "add_row",
                lhs: x.shape(),
                rhs: r.shape(),
            });
        }
        let v = Tensor2::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) + r.get(0, j));
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).softmax_rows();
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn unary(&mut self, a: NodeId, f: Unary) -> NodeId {
        let v = self.value(a).map(|x| f.apply(x));
        self.push(v, Op::Unary(a, f))
    }

    /// Replaces masked-out (false) entries with [`MASKED_LOGIT`].
    pub fn masked_fill(&mut self, a: NodeId, mask: &Mask) -> Result<NodeId> {
        let v = self.value(a).masked_fill(mask, MASKED_LOGIT)?;
        Ok(self.push(v, Op::MaskedFill(a, mask.clone())))
    }

    /// Sum of all entries, as a `1 × 1` node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor2::scalar(self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Tensor2> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor2::concat_cols(&values)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Tensor2> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor2::concat_rows(&values)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(a).slice_rows(start, end)?;
        Ok(self.push(v, Op::SliceRows(a, start)))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(a).slice_cols(start, end)?;
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    /// Row-wise layer normalization with `1 × cols` gain and bias.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let xv = self.value(x);
        let cols = xv.cols();
        for p in [gain, bias] {
            if self.shape(p) != (1, cols) {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: xv.shape(),
                    rhs: self.shape(p),
                });
            }
        }
        let (g, b) = (self.value(gain), self.value(bias));
        let mut out = Tensor2::zeros(xv.rows(), cols);
        for r in 0..xv.rows() {
            let (mean, inv) = row_stats(xv.row(r), eps);
            for c in 0..cols {
                out.set(r, c, (xv.get(r, c) - mean) * inv * g.get(0, c) + b.get(0, c));
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                eps,
            },
        ))
    }

    /// Gradients of the scalar node `loss` with respect to every variable
    /// leaf recorded before it.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::contract(format!(
                "backward from non-scalar node of shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor2::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            for (input, g) in self.local_grads(idx, &upstream)? {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.accumulate(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        // Variable leaves that the loss does not depend on get explicit zeros.
        for (idx, node) in self.nodes.iter().enumerate() {
            let is_var_leaf = node.needs_grad && matches!(node.op, Op::Leaf);
            if is_var_leaf && grads[idx].is_none() && idx <= loss.0 {
                let (r, c) = node.value.shape();
                grads[idx] = Some(Tensor2::zeros(r, c));
            }
            if !is_var_leaf {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }

    /// Vector-Jacobian products for one node's inputs. Inputs that do not need
    /// gradients may be skipped.
    fn local_grads(&self, idx: usize, dy: &Tensor2) -> Result<Vec<(NodeId, Tensor2)>> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let needs = |id: &NodeId| self.nodes[id.0].needs_grad;
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(a) {
                    out.push((*a, dy.matmul_t(self.value(*b))?));
                }
                if needs(b) {
                    out.push((*b, self.value(*a).t_matmul(dy)?));
                }
            }
            Op::MatMulT(a, b) => {
                if needs(a) {
                    out.push((*a, dy.matmul(self.value(*b))?));
                }
                if needs(b) {
                    out.push((*b, dy.t_matmul(self.value(*a))?));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, dy.clone()));
                out.push((*b, dy.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, dy.clone()));
                out.push((*b, dy.scale(-1.0)));
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    out.push((*a, dy.hadamard(self.value(*b))?));
                }
                if needs(b) {
                    out.push((*b, dy.hadamard(self.value(*a))?));
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if needs(a) {
                    out.push((*a, dy.zip_map(bv, "div", |g, d| g / d)?));
                }
                if needs(b) {
                    let ratio = av.zip_map(bv, "div", |n, d| -n / (d * d))?;
                    out.push((*b, dy.hadamard(&ratio)?));
                }
            }
            Op::Min(a, b) | Op::Max(a, b) => {
                let is_min = matches!(node.op, Op::Min(..));
                let (av, bv) = (self.value(*a), self.value(*b));
                let pick_a = av.zip_map(bv, "select", |x, z| {
                    let first = if is_min { x <= z } else { x >= z };
                    if first {
                        1.0
                    } else {
                        0.0
                    }
                })?;
                out.push((*a, dy.hadamard(&pick_a)?));
                out.push((*b, dy.hadamard(&pick_a.map(|p| 1.0 - p))?));
            }
            Op::Scale(a, k) => out.push((*a, dy.scale(*k))),
            Op::AddScalar(a) => out.push((*a, dy.clone())),
            Op::AddRow(a, row) => {
                out.push((*a, dy.clone()));
                if needs(row) {
                    out.push((*row, column_sums(dy)));
                }
            }
            Op::SoftmaxRows(a) => {
                let mut dx = Tensor2::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = y.row(r).iter().zip(dy.row(r)).map(|(p, g)| p * g).sum();
                    for c in 0..y.cols() {
                        dx.set(r, c, y.get(r, c) * (dy.get(r, c) - dot));
                    }
                }
                out.push((*a, dx));
            }
            Op::Unary(a, f) => {
                let x = self.value(*a);
                let mut dx = dy.clone();
                for ((g, &xi), &yi) in dx.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                    *g *= f.derivative(xi, yi);
                }
                out.push((*a, dx));
            }
            Op::MaskedFill(a, mask) => {
                out.push((*a, dy.masked_fill(mask, 0.0)?));
            }
            Op::SumAll(a) => {
                let (r, c) = self.shape(*a);
                out.push((*a, Tensor2::filled(r, c, dy.item()?)));
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.shape(*p).1;
                    out.push((*p, dy.slice_cols(start, start + w)?));
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let h = self.shape(*p).0;
                    out.push((*p, dy.slice_rows(start, start + h)?));
                    start += h;
                }
            }
            Op::SliceRows(a, start) => {
                let (r, c) = self.shape(*a);
                let mut dx = Tensor2::zeros(r, c);
                dx.data_mut()[start * c..(start + dy.rows()) * c].copy_from_slice(dy.data());
                out.push((*a, dx));
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.shape(*a);
                let mut dx = Tensor2::zeros(r, c);
                for i in 0..r {
                    for j in 0..dy.cols() {
                        dx.set(i, start + j, dy.get(i, j));
                    }
                }
                out.push((*a, dx));
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let xv = self.value(*x);
                let g = self.value(*gain);
                let (rows, cols) = xv.shape();
                let mut dx = Tensor2::zeros(rows, cols);
                let mut dgain = Tensor2::zeros(1, cols);
                let n = cols as f64;
                for r in 0..rows {
                    let (mean, inv) = row_stats(xv.row(r), *eps);
                    let xhat: Vec<f64> = xv.row(r).iter().map(|v| (v - mean) * inv).collect();
                    let dxhat: Vec<f64> = (0..cols).map(|c| dy.get(r, c) * g.get(0, c)).collect();
                    let sum_d: f64 = dxhat.iter().sum();
                    let sum_dx: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        dx.set(r, c, inv / n * (n * dxhat[c] - sum_d - xhat[c] * sum_dx));
                        dgain.set(0, c, dgain.get(0, c) + dy.get(r, c) * xhat[c]);
                    }
                }
                out.push((*x, dx));
                if needs(gain) {
                    out.push((*gain, dgain));
                }
                if needs(bias) {
                    out.push((*bias, column_sums(dy)));
                }
            }
        }
        Ok(out)
    }
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

fn column_sums(t: &Tensor2) -> Tensor2 {
    let mut out = Tensor2::zeros(1, t.cols());
    for r in 0..t.rows() {
        for c in 0..t.cols() {
            out.set(0, c, out.get(0, c) + t.get(r, c));
        }
    }
    out
}
