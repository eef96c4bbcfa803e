//! The label information bottleneck network and its training objectives.
//!
//! Five dense stacks make up the full model:
//!
//! - `encoder` (q → hidden → hidden, sigmoid) shared by the two posterior heads
//!   `encoder_mu` (linear) and `encoder_sigma` (softplus + floor), giving the
//!   Gaussian posterior over the latent code `h`;
//! - `decoder` (latent → hidden → hidden → c, linear) giving the mean of the
//!   unit-variance Gaussian over logical labels;
//! - `gap` (latent → … → c, softplus + floor) giving the per-label standard
//!   deviation of the gap `l − d̂`;
//! - `ld` (latent → … → c, row softmax) giving the recovered distribution `d̂`.
//!
//! The gap-only ablation keeps `gap` and `ld` and feeds them `x` directly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{BoundParams, DenseStack, OutputActivation, ParamSet};

pub const ENCODER: &str = "encoder";
pub const ENCODER_MU: &str = "encoder_mu";
pub const ENCODER_SIGMA: &str = "encoder_sigma";
pub const DECODER: &str = "decoder";
pub const GAP_HEAD: &str = "gap";
pub const LD_HEAD: &str = "ld";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveKind {
    #[serde(rename = "LIB")]
    Lib,
    #[serde(rename = "LIB_GAP")]
    LibGap,
}

impl ObjectiveKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveKind::Lib => "LIB",
            ObjectiveKind::LibGap => "LIB_GAP",
        }
    }
}

impl std::fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub n_labels: usize,
}

impl ModelDims {
    fn check(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.latent_dim == 0 || self.n_labels == 0 {
            return Err(Error::Config(format!("all model widths must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn stacks(&self, kind: ObjectiveKind) -> Vec<DenseStack> {
        let (q, h, z, c) = (self.input_dim, self.hidden_dim, self.latent_dim, self.n_labels);
        match kind {
            ObjectiveKind::Lib => vec![
                DenseStack::new(ENCODER, vec![q, h, h], OutputActivation::Sigmoid),
                DenseStack::new(ENCODER_MU, vec![h, z], OutputActivation::Linear),
                DenseStack::new(ENCODER_SIGMA, vec![h, z], OutputActivation::PositiveFloor),
                DenseStack::new(DECODER, vec![z, h, h, c], OutputActivation::Linear),
                DenseStack::new(GAP_HEAD, vec![z, h, h, c], OutputActivation::PositiveFloor),
                DenseStack::new(LD_HEAD, vec![z, h, h, c], OutputActivation::SoftmaxRows),
            ],
            ObjectiveKind::LibGap => vec![
                DenseStack::new(GAP_HEAD, vec![q, h, h, c], OutputActivation::PositiveFloor),
                DenseStack::new(LD_HEAD, vec![q, h, h, c], OutputActivation::SoftmaxRows),
            ],
        }
    }
}

/// Weights of one trained (or initialised) model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub objective: ObjectiveKind,
    pub dims: ModelDims,
    pub blocks: ParamSet,
}

impl ModelParams {
    /// Glorot-initialised parameters, deterministic in `seed`.
    pub fn init(kind: ObjectiveKind, dims: ModelDims, seed: u64) -> Result<Self> {
        dims.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = ParamSet::new();
        for stack in dims.stacks(kind) {
            stack.init(&mut blocks, &mut rng);
        }
        Ok(Self {
            objective: kind,
            dims,
            blocks,
        })
    }

    pub fn zeros(kind: ObjectiveKind, dims: ModelDims) -> Result<Self> {
        dims.check()?;
        let mut blocks = ParamSet::new();
        for stack in dims.stacks(kind) {
            stack.init_zeros(&mut blocks);
        }
        Ok(Self {
            objective: kind,
            dims,
            blocks,
        })
    }

    pub fn stack(&self, prefix: &str) -> Result<DenseStack> {
        self.dims
            .stacks(self.objective)
            .into_iter()
            .find(|s| s.prefix == prefix)
            .ok_or_else(|| Error::MissingParam(format!("{prefix}.*")))
    }

    /// Every block exists with the shape its stack expects.
    pub fn validate(&self) -> Result<()> {
        let expected = Self::zeros(self.objective, self.dims)?;
        if expected.blocks.len() != self.blocks.len() {
            return Err(Error::Data(format!(
                "expected {} parameter blocks, found {}",
                expected.blocks.len(),
                self.blocks.len()
            )));
        }
        for (name, m) in expected.blocks.iter() {
            let got = self.blocks.get(name)?;
            if got.shape() != m.shape() {
                return Err(Error::shape("parameter block", got.shape(), m.shape()));
            }
        }
        Ok(())
    }
}

/// One reparameterised draw of the latent code.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    pub mu: Matrix,
    pub sigma: Matrix,
    pub epsilon: Matrix,
    pub h: Matrix,
}

/// Per-instance means of the three objective terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub assignment_term: f64,
    pub gap_term: f64,
    pub kl_term: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Scalar nodes of a recorded objective.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: NodeId,
    pub assignment: Option<NodeId>,
    pub gap: NodeId,
    pub kl: Option<NodeId>,
    pub alpha: f64,
    pub beta: f64,
}

impl LossNodes {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        let v = |id: Option<NodeId>| id.map_or(0.0, |id| tape.value(id).data()[0]);
        LossBreakdown {
            total: v(Some(self.total)),
            assignment_term: v(self.assignment),
            gap_term: v(Some(self.gap)),
            kl_term: v(self.kl),
            alpha: self.alpha,
            beta: self.beta,
        }
    }
}

fn ones_column(tape: &mut Tape, n: usize) -> NodeId {
    tape.constant(Matrix::filled(n, 1, 1.0))
}

fn check_rows(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.rows() != b.rows() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn tag_term(term: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::NonFinite { term: op } => Error::NonFinite {
            term: format!("{term} ({op})"),
        },
        Error::Domain { op, detail } => Error::NonFinite {
            term: format!("{term} ({op}: {detail})"),
        },
        other => other,
    }
}

/// Standard-normal draws, row-major, from a seeded ChaCha stream.
pub fn standard_normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Records `(mu, sigma)` of the latent posterior for the rows of `x`.
pub fn encode_nodes(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &BoundParams,
    x: NodeId,
    ones: NodeId,
) -> Result<(NodeId, NodeId)> {
    let hidden = params.stack(ENCODER)?.forward(tape, bound, x, ones)?;
    let mu = params.stack(ENCODER_MU)?.forward(tape, bound, hidden, ones)?;
    let sigma = params.stack(ENCODER_SIGMA)?.forward(tape, bound, hidden, ones)?;
    Ok((mu, sigma))
}

fn head_forward(params: &ModelParams, prefix: &str, input: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let bound = params.blocks.bind_constant(&mut tape);
    let x = tape.constant(input.clone());
    let ones = ones_column(&mut tape, input.rows());
    let out = params.stack(prefix)?.forward(&mut tape, &bound, x, ones)?;
    Ok(tape.value(out).clone())
}

/// Posterior mean and standard deviation of `h` given each row of `x`.
pub fn encode(params: &ModelParams, x: &Matrix) -> Result<(Matrix, Matrix)> {
    if params.objective != ObjectiveKind::Lib {
        return Err(Error::Config("the gap-only model has no encoder".into()));
    }
    if x.cols() != params.dims.input_dim {
        return Err(Error::shape("encode", x.shape(), (x.rows(), params.dims.input_dim)));
    }
    let mut tape = Tape::new();
    let bound = params.blocks.bind_constant(&mut tape);
    let xn = tape.constant(x.clone());
    let ones = ones_column(&mut tape, x.rows());
    let (mu, sigma) = encode_nodes(&mut tape, params, &bound, xn, ones)?;
    Ok((tape.value(mu).clone(), tape.value(sigma).clone()))
}

/// `h = mu + sigma ⊙ ε` with `ε` drawn from `rng`.
pub fn sample_latent_with(mu: &Matrix, sigma: &Matrix, rng: &mut ChaCha8Rng) -> Result<LatentBatch> {
    if mu.shape() != sigma.shape() {
        return Err(Error::shape("sample_latent", mu.shape(), sigma.shape()));
    }
    if let Some(bad) = sigma.data().iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::Domain {
            op: "sample_latent",
            detail: format!("sigma must be positive, got {bad}"),
        });
    }
    let epsilon = standard_normal(mu.rows(), mu.cols(), rng);
    Ok(reparameterize(mu, sigma, epsilon))
}

pub fn sample_latent(mu: &Matrix, sigma: &Matrix, seed: u64) -> Result<LatentBatch> {
    sample_latent_with(mu, sigma, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Latent batch for a caller-chosen `ε` (inference uses `ε = 0`).
pub fn reparameterize(mu: &Matrix, sigma: &Matrix, epsilon: Matrix) -> LatentBatch {
    let h = Matrix::from_fn(mu.rows(), mu.cols(), |i, j| {
        mu.get(i, j) + sigma.get(i, j) * epsilon.get(i, j)
    });
    LatentBatch {
        mu: mu.clone(),
        sigma: sigma.clone(),
        epsilon,
        h,
    }
}

fn latent_head(params: &ModelParams, prefix: &'static str, h: &Matrix) -> Result<Matrix> {
    let expect = match params.objective {
        ObjectiveKind::Lib => params.dims.latent_dim,
        ObjectiveKind::LibGap => params.dims.input_dim,
    };
    if h.cols() != expect {
        return Err(Error::shape(prefix, h.shape(), (h.rows(), expect)));
    }
    head_forward(params, prefix, h)
}

/// Mean of the Gaussian over logical labels.
pub fn decode_logical(params: &ModelParams, h: &Matrix) -> Result<Matrix> {
    latent_head(params, DECODER, h)
}

/// Per-label standard deviation of the label gap.
pub fn gap_sigma(params: &ModelParams, h: &Matrix) -> Result<Matrix> {
    latent_head(params, GAP_HEAD, h)
}

/// Recovered label distribution, one simplex row per input row.
pub fn recover_distribution(params: &ModelParams, h: &Matrix) -> Result<Matrix> {
    latent_head(params, LD_HEAD, h)
}

/// Deterministic recovery: the latent code is the posterior mean.
pub fn recover_all(params: &ModelParams, x: &Matrix) -> Result<Matrix> {
    match params.objective {
        ObjectiveKind::Lib => {
            let (mu, _) = encode(params, x)?;
            recover_distribution(params, &mu)
        }
        ObjectiveKind::LibGap => {
            if x.cols() != params.dims.input_dim {
                return Err(Error::shape("recover_all", x.shape(), (x.rows(), params.dims.input_dim)));
            }
            head_forward(params, LD_HEAD, x)
        }
    }
}

/// `(1/n) Σᵢ [½ Σⱼ δᵢⱼ² / σᵢⱼ² + Σⱼ log σᵢⱼ²]` with `δ = l − d̂`.
pub fn gap_nll_nodes(
    tape: &mut Tape,
    labels: NodeId,
    d_hat: NodeId,
    sigma: NodeId,
) -> Result<NodeId> {
    let n = tape.value(labels).rows() as f64;
    let delta = tape.sub(labels, d_hat)?;
    let delta_sq = tape.square(delta)?;
    let log_sigma = tape.ln(sigma)?;
    let neg2_log_sigma = tape.scale(log_sigma, -2.0)?;
    let inv_var = tape.exp(neg2_log_sigma)?;
    let weighted = tape.mul(delta_sq, inv_var)?;
    let quad = tape.sum(weighted)?;
    let quad = tape.scale(quad, 0.5)?;
    let sum_log_sigma = tape.sum(log_sigma)?;
    let log_det = tape.scale(sum_log_sigma, 2.0)?;
    let total = tape.add(quad, log_det)?;
    tape.scale(total, 1.0 / n)
}

/// `(1/n) Σᵢ ½ [μᵢᵀμᵢ + Σⱼ σᵢⱼ² − Σⱼ log σᵢⱼ²]`.
pub fn kl_nodes(tape: &mut Tape, mu: NodeId, sigma: NodeId) -> Result<NodeId> {
    let n = tape.value(mu).rows() as f64;
    let mu_sq = tape.square(mu)?;
    let mu_sq = tape.sum(mu_sq)?;
    let var = tape.square(sigma)?;
    let var = tape.sum(var)?;
    let log_sigma = tape.ln(sigma)?;
    let log_sigma = tape.sum(log_sigma)?;
    let log_var = tape.scale(log_sigma, 2.0)?;
    let a = tape.add(mu_sq, var)?;
    let b = tape.sub(a, log_var)?;
    tape.scale(b, 0.5 / n)
}

/// Records the full objective on `tape`. One `ε` matrix per Monte-Carlo
/// sample; the assignment and gap terms are averaged over samples and all
/// three terms share the same draws of `h`.
#[allow(clippy::too_many_arguments)]
pub fn lib_loss_nodes(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &BoundParams,
    x: &Matrix,
    labels: &Matrix,
    epsilons: &[Matrix],
    alpha: f64,
    beta: f64,
) -> Result<LossNodes> {
    check_rows("loss_lib", x, labels)?;
    if labels.cols() != params.dims.n_labels {
        return Err(Error::shape("loss_lib", labels.shape(), (labels.rows(), params.dims.n_labels)));
    }
    if epsilons.is_empty() {
        return Err(Error::Config("at least one Monte-Carlo sample is required".into()));
    }
    let n = x.rows();
    let xn = tape.constant(x.clone());
    let ln = tape.constant(labels.clone());
    let ones = ones_column(tape, n);
    let (mu, sigma) = encode_nodes(tape, params, bound, xn, ones).map_err(tag_term("encoder"))?;

    let decoder = params.stack(DECODER)?;
    let gap_head = params.stack(GAP_HEAD)?;
    let ld_head = params.stack(LD_HEAD)?;

    let mut assignment: Option<NodeId> = None;
    let mut gap: Option<NodeId> = None;
    for eps in epsilons {
        if eps.shape() != (n, params.dims.latent_dim) {
            return Err(Error::shape("sample_latent", eps.shape(), (n, params.dims.latent_dim)));
        }
        let e = tape.constant(eps.clone());
        let noise = tape.mul(sigma, e)?;
        let h = tape.add(mu, noise)?;

        let a = (|| {
            let mu_l = decoder.forward(tape, bound, h, ones)?;
            let diff = tape.sub(mu_l, ln)?;
            let sq = tape.square(diff)?;
            let s = tape.sum(sq)?;
            tape.scale(s, 0.5 / n as f64)
        })()
        .map_err(tag_term("assignment_term"))?;

        let g = (|| {
            let sigma_d = gap_head.forward(tape, bound, h, ones)?;
            let d_hat = ld_head.forward(tape, bound, h, ones)?;
            gap_nll_nodes(tape, ln, d_hat, sigma_d)
        })()
        .map_err(tag_term("gap_term"))?;

        assignment = Some(match assignment {
            Some(acc) => tape.add(acc, a)?,
            None => a,
        });
        gap = Some(match gap {
            Some(acc) => tape.add(acc, g)?,
            None => g,
        });
    }
    let samples = epsilons.len() as f64;
    let (mut assignment, mut gap) = (assignment.unwrap(), gap.unwrap());
    if epsilons.len() > 1 {
        assignment = tape.scale(assignment, 1.0 / samples)?;
        gap = tape.scale(gap, 1.0 / samples)?;
    }
    let kl = kl_nodes(tape, mu, sigma).map_err(tag_term("kl_term"))?;

    let weighted_gap = tape.scale(gap, alpha)?;
    let weighted_kl = tape.scale(kl, beta)?;
    let partial = tape.add(assignment, weighted_gap)?;
    let total = tape.add(partial, weighted_kl).map_err(tag_term("total"))?;
    Ok(LossNodes {
        total,
        assignment: Some(assignment),
        gap,
        kl: Some(kl),
        alpha,
        beta,
    })
}

/// The gap-only ablation objective on `x` directly (no encoder, no sampling).
pub fn lib_gap_loss_nodes(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &BoundParams,
    x: &Matrix,
    labels: &Matrix,
) -> Result<LossNodes> {
    check_rows("loss_lib_gap", x, labels)?;
    if labels.cols() != params.dims.n_labels {
        return Err(Error::shape(
            "loss_lib_gap",
            labels.shape(),
            (labels.rows(), params.dims.n_labels),
        ));
    }
    let xn = tape.constant(x.clone());
    let ln = tape.constant(labels.clone());
    let ones = ones_column(tape, x.rows());
    let gap = (|| {
        let sigma_d = params.stack(GAP_HEAD)?.forward(tape, bound, xn, ones)?;
        let d_hat = params.stack(LD_HEAD)?.forward(tape, bound, xn, ones)?;
        gap_nll_nodes(tape, ln, d_hat, sigma_d)
    })()
    .map_err(tag_term("gap_term"))?;
    Ok(LossNodes {
        total: gap,
        assignment: None,
        gap,
        kl: None,
        alpha: 1.0,
        beta: 0.0,
    })
}

fn require(params: &ModelParams, kind: ObjectiveKind) -> Result<()> {
    if params.objective != kind {
        return Err(Error::Config(format!(
            "expected {kind} parameters, got {}",
            params.objective
        )));
    }
    Ok(())
}

/// Objective value with `samples` Monte-Carlo draws of `ε` from `seed`.
pub fn loss_lib_sampled(
    params: &ModelParams,
    x: &Matrix,
    labels: &Matrix,
    seed: u64,
    alpha: f64,
    beta: f64,
    samples: usize,
) -> Result<LossBreakdown> {
    require(params, ObjectiveKind::Lib)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps: Vec<Matrix> = (0..samples)
        .map(|_| standard_normal(x.rows(), params.dims.latent_dim, &mut rng))
        .collect();
    let mut tape = Tape::new();
    let bound = params.blocks.bind_constant(&mut tape);
    let nodes = lib_loss_nodes(&mut tape, params, &bound, x, labels, &eps, alpha, beta)?;
    Ok(nodes.breakdown(&tape))
}

/// Objective value with one Monte-Carlo draw per instance.
pub fn loss_lib(
    params: &ModelParams,
    x: &Matrix,
    labels: &Matrix,
    seed: u64,
    alpha: f64,
    beta: f64,
) -> Result<LossBreakdown> {
    loss_lib_sampled(params, x, labels, seed, alpha, beta, 1)
}

pub fn loss_lib_gap(params: &ModelParams, x: &Matrix, labels: &Matrix) -> Result<f64> {
    require(params, ObjectiveKind::LibGap)?;
    let mut tape = Tape::new();
    let bound = params.blocks.bind_constant(&mut tape);
    let nodes = lib_gap_loss_nodes(&mut tape, params, &bound, x, labels)?;
    Ok(tape.value(nodes.total).data()[0])
}
