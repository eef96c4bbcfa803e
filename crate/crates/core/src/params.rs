//! Named parameter blocks and the dense stacks built from them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradientSet, NodeId, Tape};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Ordered, named parameter blocks. Also used for gradients, which share
/// names and shapes with the parameters they differentiate.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    blocks: Vec<(String, Matrix)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        let name = name.into();
        match self.blocks.iter_mut().find(|(n, _)| *n == name) {
            Some((_, slot)) => *slot = value,
            None => self.blocks.push((name, value)),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.blocks
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.blocks.iter().any(|(n, _)| n == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.blocks.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.blocks.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.blocks.iter_mut().map(|(n, m)| (n.as_str(), m))
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.blocks.iter().map(|(_, m)| m.len()).sum()
    }

    /// A set with the same names and shapes, filled with zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .map(|(n, m)| (n.clone(), Matrix::zeros(m.rows(), m.cols())))
                .collect(),
        }
    }

    /// Keeps only the blocks whose name starts with one of `prefixes`.
    pub fn retain_prefixes(&mut self, prefixes: &[&str]) {
        self.blocks
            .retain(|(n, _)| prefixes.iter().any(|p| n.starts_with(&format!("{p}."))));
    }

    /// Registers every block on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        self.bind_with(tape, true)
    }

    /// Registers every block on `tape` as a constant (inference only).
    pub fn bind_constant(&self, tape: &mut Tape) -> BoundParams {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape, differentiable: bool) -> BoundParams {
        let entries = self
            .blocks
            .iter()
            .map(|(n, m)| {
                let id = if differentiable {
                    tape.param(m.clone())
                } else {
                    tape.constant(m.clone())
                };
                (n.clone(), id)
            })
            .collect();
        BoundParams { entries }
    }
}

/// Node ids of a [`ParamSet`] bound to a tape.
#[derive(Debug, Clone)]
pub struct BoundParams {
    entries: Vec<(String, NodeId)>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    /// Collects the tape gradients into a set named like the parameters.
    pub fn gradients(&self, tape: &Tape, grads: &GradientSet) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, id) in &self.entries {
            let g = grads.get(*id).cloned().unwrap_or_else(|| {
                let v = tape.value(*id);
                Matrix::zeros(v.rows(), v.cols())
            });
            out.insert(name.clone(), g);
        }
        out
    }
}

/// How the last layer of a [`DenseStack`] is squashed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Linear,
    Sigmoid,
    /// softplus plus a positive floor
    PositiveFloor,
    SoftmaxRows,
}

/// Lower bound added to softplus outputs that parameterise a standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Fully connected layers stored as `{prefix}.{i}.weight` (in×out) and
/// `{prefix}.{i}.bias` (1×out), with sigmoid between layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseStack {
    pub prefix: String,
    pub dims: Vec<usize>,
    pub output: OutputActivation,
}

impl DenseStack {
    pub fn new(prefix: impl Into<String>, dims: Vec<usize>, output: OutputActivation) -> Self {
        assert!(dims.len() >= 2, "a stack needs at least input and output widths");
        Self {
            prefix: prefix.into(),
            dims,
            output,
        }
    }

    pub fn depth(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.{layer}.weight", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.{layer}.bias", self.prefix)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) {
        for layer in 0..self.depth() {
            let (fan_in, fan_out) = (self.dims[layer], self.dims[layer + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..=limit));
            params.insert(self.weight_name(layer), w);
            params.insert(self.bias_name(layer), Matrix::zeros(1, fan_out));
        }
    }

    pub fn init_zeros(&self, params: &mut ParamSet) {
        for layer in 0..self.depth() {
            let (fan_in, fan_out) = (self.dims[layer], self.dims[layer + 1]);
            params.insert(self.weight_name(layer), Matrix::zeros(fan_in, fan_out));
            params.insert(self.bias_name(layer), Matrix::zeros(1, fan_out));
        }
    }

    /// Records the stack on `tape`. `ones` must be an `n×1` constant of ones,
    /// used to broadcast biases across rows.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        input: NodeId,
        ones: NodeId,
    ) -> Result<NodeId> {
        let cols = tape.value(input).cols();
        if cols != self.input_dim() {
            return Err(Error::shape(
                "dense_stack",
                tape.value(input).shape(),
                (self.input_dim(), self.dims[1]),
            ));
        }
        let mut h = input;
        for layer in 0..self.depth() {
            let w = params.id(&self.weight_name(layer))?;
            let b = params.id(&self.bias_name(layer))?;
            let xw = tape.matmul(h, w)?;
            let bias = tape.matmul(ones, b)?;
            h = tape.add(xw, bias)?;
            if layer + 1 < self.depth() {
                h = tape.sigmoid(h)?;
            }
        }
        match self.output {
            OutputActivation::Linear => Ok(h),
            OutputActivation::Sigmoid => tape.sigmoid(h),
            OutputActivation::PositiveFloor => {
                let sp = tape.softplus(h)?;
                tape.add_scalar(sp, SIGMA_FLOOR)
            }
            OutputActivation::SoftmaxRows => tape.softmax_rows(h),
        }
    }
}
