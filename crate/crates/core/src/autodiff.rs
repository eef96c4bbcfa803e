//! A small reverse-mode tape over dense matrices.
//!
//! The tape records every primitive in evaluation order, so node ids are a
//! topological order by construction. Leaves are either constants or
//! parameters; [`Tape::backward`] returns gradients for parameter leaves only.
//!
//! Broadcasting is limited to a `1×1` operand in the elementwise primitives.

use std::fmt;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable primitive. `Scale` carries its constant factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Sigmoid,
    Softplus,
    Exp,
    Ln,
    Square,
    Sum,
    SoftmaxRows,
    SumRows,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softplus => "softplus",
            OpKind::Exp => "exp",
            OpKind::Ln => "ln",
            OpKind::Square => "square",
            OpKind::Sum => "sum",
            OpKind::SoftmaxRows => "softmax_rows",
            OpKind::SumRows => "sum_rows",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
enum NodeKind {
    Constant,
    Param,
    Op { kind: OpKind, inputs: Vec<NodeId> },
}

#[derive(Debug, Clone)]
struct Node {
    kind: NodeKind,
    value: Matrix,
    // true when some parameter leaf feeds this node
    requires_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to the parameter leaves of a tape.
#[derive(Debug, Clone, Default)]
pub struct GradientSet {
    grads: Vec<(NodeId, Matrix)>,
}

impl GradientSet {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads
            .binary_search_by_key(&id, |(k, _)| *k)
            .ok()
            .map(|i| &self.grads[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Matrix)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
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

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

fn broadcast_zip(
    op: OpKind,
    a: &Matrix,
    b: &Matrix,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Matrix> {
    if a.shape() == b.shape() {
        Ok(a.zip_map(b, f))
    } else if b.is_scalar() {
        let s = b.data()[0];
        Ok(a.map(|v| f(v, s)))
    } else if a.is_scalar() {
        let s = a.data()[0];
        Ok(b.map(|v| f(s, v)))
    } else {
        Err(Error::shape(op.name(), a.shape(), b.shape()))
    }
}

/// Sums `grad` down to `shape` when the operand was a broadcast scalar.
fn reduce_to(grad: Matrix, shape: (usize, usize)) -> Matrix {
    if grad.shape() == shape {
        grad
    } else {
        Matrix::scalar(grad.sum())
    }
}

/// Evaluates one primitive on concrete inputs.
pub fn evaluate(kind: OpKind, inputs: &[&Matrix]) -> Result<Matrix> {
    if inputs.len() != kind.arity() {
        return Err(Error::Domain {
            op: kind.name(),
            detail: format!("expected {} inputs, got {}", kind.arity(), inputs.len()),
        });
    }
    let a = inputs[0];
    let out = match kind {
        OpKind::MatMul => a.matmul(inputs[1]).map_err(|_| Error::shape("matmul", a.shape(), inputs[1].shape()))?,
        OpKind::Add => broadcast_zip(kind, a, inputs[1], |x, y| x + y)?,
        OpKind::Sub => broadcast_zip(kind, a, inputs[1], |x, y| x - y)?,
        OpKind::Mul => broadcast_zip(kind, a, inputs[1], |x, y| x * y)?,
        OpKind::Scale(s) => a.map(|x| x * s),
        OpKind::Sigmoid => a.map(sigmoid),
        OpKind::Softplus => a.map(softplus),
        OpKind::Exp => a.map(f64::exp),
        OpKind::Ln => {
            if let Some(bad) = a.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                return Err(Error::Domain {
                    op: "ln",
                    detail: format!("non-positive input {bad}"),
                });
            }
            a.map(f64::ln)
        }
        OpKind::Square => a.map(|x| x * x),
        OpKind::Sum => Matrix::scalar(a.sum()),
        OpKind::SoftmaxRows => softmax_rows(a),
        OpKind::SumRows => Matrix::from_fn(a.rows(), 1, |i, _| a.row(i).iter().sum()),
    };
    if !out.all_finite() {
        return Err(Error::NonFinite {
            term: kind.name().to_string(),
        });
    }
    Ok(out)
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

    fn push(&mut self, kind: NodeKind, value: Matrix, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            kind,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(NodeKind::Constant, value, false)
    }

    /// A leaf differentiated by [`Tape::backward`].
    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.push(NodeKind::Param, value, true)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn is_param(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].kind, NodeKind::Param)
    }

    /// Records `kind` applied to `inputs` and returns the new node.
    pub fn forward(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        if let Some(bad) = inputs.iter().find(|id| id.0 >= self.nodes.len()) {
            return Err(Error::Domain {
                op: kind.name(),
                detail: format!("input node {} is not on this tape", bad.0),
            });
        }
        let values: Vec<&Matrix> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
        let value = evaluate(kind, &values)?;
        let requires_grad = inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        Ok(self.push(
            NodeKind::Op {
                kind,
                inputs: inputs.to_vec(),
            },
            value,
            requires_grad,
        ))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.forward(OpKind::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.forward(OpKind::Scale(factor), &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Sigmoid, &[a])
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Softplus, &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Exp, &[a])
    }

    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Ln, &[a])
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Square, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Sum, &[a])
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward(OpKind::SoftmaxRows, &[a])
    }

    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward(OpKind::SumRows, &[a])
    }

    /// Adds a `1×1` constant to every entry of `a`.
    pub fn add_scalar(&mut self, a: NodeId, value: f64) -> Result<NodeId> {
        let c = self.constant(Matrix::scalar(value));
        self.add(a, c)
    }

    /// Recomputes every op node from its recorded inputs and checks the
    /// stored value bit for bit. Returns the first mismatching node, if any.
    pub fn replay_mismatch(&self) -> Result<Option<NodeId>> {
        for (i, node) in self.nodes.iter().enumerate() {
            if let NodeKind::Op { kind, inputs } = &node.kind {
                if inputs.iter().any(|id| id.0 >= i) {
                    return Ok(Some(NodeId(i)));
                }
                let values: Vec<&Matrix> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
                let recomputed = evaluate(*kind, &values)?;
                let same = recomputed
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                if !same || recomputed.shape() != node.value.shape() {
                    return Ok(Some(NodeId(i)));
                }
            }
        }
        Ok(None)
    }

    /// Reverse-mode gradients of the `1×1` node `loss` with respect to every
    /// parameter leaf. Gradients from fan-out accumulate additively.
    pub fn backward(&self, loss: NodeId) -> Result<GradientSet> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape()));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let NodeKind::Op { kind, inputs } = &node.kind else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let contributions = self.local_backward(*kind, inputs, &node.value, g)?;
            for (input, contrib) in inputs.iter().zip(contributions) {
                let Some(contrib) = contrib else { continue };
                match &mut grads[input.0] {
                    Some(acc) => acc.data_mut().iter_mut().zip(contrib.data()).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        let grads = self
            .nodes
            .iter()
            .enumerate()
            .take(loss.0 + 1)
            .filter(|(_, n)| matches!(n.kind, NodeKind::Param))
            .map(|(i, n)| {
                let g = grads[i]
                    .take()
                    .unwrap_or_else(|| Matrix::zeros(n.value.rows(), n.value.cols()));
                (NodeId(i), g)
            })
            .collect();
        Ok(GradientSet { grads })
    }

    fn local_backward(
        &self,
        kind: OpKind,
        inputs: &[NodeId],
        out: &Matrix,
        g: Matrix,
    ) -> Result<Vec<Option<Matrix>>> {
        let val = |k: usize| &self.nodes[inputs[k].0].value;
        let wants = |k: usize| self.nodes[inputs[k].0].requires_grad;
        let res = match kind {
            OpKind::MatMul => {
                let ga = if wants(0) { Some(g.matmul_t(val(1))?) } else { None };
                let gb = if wants(1) { Some(val(0).t_matmul(&g)?) } else { None };
                vec![ga, gb]
            }
            OpKind::Add | OpKind::Sub => {
                let sign = if kind == OpKind::Sub { -1.0 } else { 1.0 };
                let ga = wants(0).then(|| reduce_to(g.clone(), val(0).shape()));
                let gb = wants(1).then(|| reduce_to(g.map(|v| sign * v), val(1).shape()));
                vec![ga, gb]
            }
            OpKind::Mul => {
                let ga = if wants(0) {
                    Some(reduce_to(broadcast_zip(kind, &g, val(1), |x, y| x * y)?, val(0).shape()))
                } else {
                    None
                };
                let gb = if wants(1) {
                    Some(reduce_to(broadcast_zip(kind, &g, val(0), |x, y| x * y)?, val(1).shape()))
                } else {
                    None
                };
                vec![ga, gb]
            }
            OpKind::Scale(s) => vec![Some(g.map(|v| v * s))],
            OpKind::Sigmoid => vec![Some(g.zip_map(out, |gv, y| gv * y * (1.0 - y)))],
            OpKind::Softplus => vec![Some(g.zip_map(val(0), |gv, x| gv * sigmoid(x)))],
            OpKind::Exp => vec![Some(g.zip_map(out, |gv, y| gv * y))],
            OpKind::Ln => vec![Some(g.zip_map(val(0), |gv, x| gv / x))],
            OpKind::Square => vec![Some(g.zip_map(val(0), |gv, x| 2.0 * x * gv))],
            OpKind::Sum => {
                let (r, c) = val(0).shape();
                vec![Some(Matrix::filled(r, c, g.data()[0]))]
            }
            OpKind::SoftmaxRows => {
                let mut ga = g;
                for i in 0..out.rows() {
                    let y = out.row(i);
                    let row = ga.row_mut(i);
                    let dot: f64 = row.iter().zip(y).map(|(a, b)| a * b).sum();
                    row.iter_mut().zip(y).for_each(|(gv, &yv)| *gv = yv * (*gv - dot));
                }
                vec![Some(ga)]
            }
            OpKind::SumRows => {
                let (r, c) = val(0).shape();
                vec![Some(Matrix::from_fn(r, c, |i, _| g.get(i, 0)))]
            }
        };
        Ok(res)
    }
}
