//! Optimisation loop, run history and the α/β grid search.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::binarize::BinarizeStrategy;
use crate::data::{check_logical_rows, Dataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{evaluate, EvalReport};
use crate::model::{LossBreakdown, ModelDims, ModelParams, ObjectiveKind};
use crate::objective;
use crate::params::ParamSet;

/// The α/β values searched by default.
pub const DEFAULT_GRID: [f64; 5] = [0.001, 0.01, 0.1, 1.0, 10.0];

/// Upper end of the usual α/β range; larger values only produce a warning.
pub const WEIGHT_WARN_BOUND: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(into = "BatchRepr", try_from = "BatchRepr")]
pub enum Batch {
    #[default]
    Full,
    Size(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BatchRepr {
    Label(String),
    Size(usize),
}

impl From<Batch> for BatchRepr {
    fn from(b: Batch) -> Self {
        match b {
            Batch::Full => BatchRepr::Label("FULL".into()),
            Batch::Size(n) => BatchRepr::Size(n),
        }
    }
}

impl TryFrom<BatchRepr> for Batch {
    type Error = String;
    fn try_from(r: BatchRepr) -> std::result::Result<Self, String> {
        match r {
            BatchRepr::Size(0) => Err("batch size must be positive".into()),
            BatchRepr::Size(n) => Ok(Batch::Size(n)),
            BatchRepr::Label(s) if s.eq_ignore_ascii_case("full") => Ok(Batch::Full),
            BatchRepr::Label(s) => Err(format!("invalid batch `{s}`")),
        }
    }
}

impl FromStr for Batch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let repr = match s.parse::<usize>() {
            Ok(n) => BatchRepr::Size(n),
            Err(_) => BatchRepr::Label(s.to_string()),
        };
        Batch::try_from(repr).map_err(Error::Config)
    }
}

impl fmt::Display for Batch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Batch::Full => f.write_str("FULL"),
            Batch::Size(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch: Batch,
    pub seed: u64,
    pub mc_samples: usize,
    pub objective: ObjectiveKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.01,
            latent_dim: 256,
            hidden_dim: 64,
            epochs: 150,
            learning_rate: 1e-3,
            batch: Batch::Full,
            seed: 0,
            mc_samples: 1,
            objective: ObjectiveKind::Lib,
        }
    }
}

impl TrainConfig {
    /// Hard errors for unusable settings; the returned strings are warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        if self.latent_dim == 0 || self.hidden_dim == 0 {
            return bad("latent and hidden widths must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.mc_samples == 0 {
            return bad("mc_samples must be positive".into());
        }
        if let Batch::Size(0) = self.batch {
            return bad("batch size must be positive".into());
        }
        let mut warnings = Vec::new();
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if v > WEIGHT_WARN_BOUND {
                warnings.push(format!("{name} = {v} is outside the usual [0, {WEIGHT_WARN_BOUND}] range"));
            }
        }
        Ok(warnings)
    }

    pub fn dims(&self, input_dim: usize, n_labels: usize) -> ModelDims {
        ModelDims {
            input_dim,
            hidden_dim: self.hidden_dim,
            latent_dim: self.latent_dim,
            n_labels,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: ParamSet,
    v: ParamSet,
}

impl Adam {
    pub fn new(learning_rate: f64, like: &ParamSet) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name)?;
            let m = self.m.get_mut(name)?;
            let v = self.v.get_mut(name)?;
            for k in 0..p.len() {
                let gk = g.data()[k];
                let mk = &mut m.data_mut()[k];
                *mk = b1 * *mk + (1.0 - b1) * gk;
                let vk = &mut v.data_mut()[k];
                *vk = b2 * *vk + (1.0 - b2) * gk * gk;
                let m_hat = m.data()[k] / c1;
                let v_hat = v.data()[k] / c2;
                p.data_mut()[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// `(epoch, term)` when training stopped on a non-finite value.
    pub aborted: Option<(usize, String)>,
}

impl TrainHistory {
    pub fn initial(&self) -> Option<&LossBreakdown> {
        self.epochs.first().map(|r| &r.loss)
    }

    pub fn last(&self) -> Option<&LossBreakdown> {
        self.epochs.last().map(|r| &r.loss)
    }

    /// CSV with columns `epoch,total,assignment,gap,kl,seconds`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "total", "assignment", "gap", "kl", "seconds"])?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.loss.total.to_string(),
                r.loss.assignment_term.to_string(),
                r.loss.gap_term.to_string(),
                r.loss.kl_term.to_string(),
                r.seconds.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn grads_finite(g: &ParamSet) -> bool {
    g.iter().all(|(_, m)| m.all_finite())
}

fn weighted_add(acc: &mut LossBreakdown, b: &LossBreakdown, w: f64) {
    acc.total += w * b.total;
    acc.assignment_term += w * b.assignment_term;
    acc.gap_term += w * b.gap_term;
    acc.kl_term += w * b.kl_term;
    acc.alpha = b.alpha;
    acc.beta = b.beta;
}

/// Trains the configured objective on features `x` and logical labels.
///
/// Parameters are initialised from `config.seed`; the sampling noise and
/// minibatch order come from a separate stream of the same seed, so a run
/// is a pure function of its inputs and config.
pub fn train(x: &Matrix, labels: &Matrix, config: &TrainConfig) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    if x.rows() != labels.rows() {
        return Err(Error::shape("train", x.shape(), labels.shape()));
    }
    if x.rows() == 0 {
        return Err(Error::Data("no training instances".into()));
    }
    check_logical_rows(labels)?;
    if !x.all_finite() {
        return Err(Error::Data("non-finite feature value".into()));
    }

    let obj = objective::by_kind(config.objective);
    let dims = config.dims(x.cols(), labels.cols());
    let mut params = obj.init_params(dims, config.seed)?;
    let mut adam = Adam::new(config.learning_rate, &params.blocks);

    let mut noise = ChaCha8Rng::seed_from_u64(config.seed);
    noise.set_stream(1);

    let n = x.rows();
    let batch = match config.batch {
        Batch::Full => n,
        Batch::Size(b) => b.min(n),
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = TrainHistory::default();

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        if batch < n {
            order.shuffle(&mut noise);
        }
        let mut epoch_loss = LossBreakdown {
            total: 0.0,
            assignment_term: 0.0,
            gap_term: 0.0,
            kl_term: 0.0,
            alpha: config.alpha,
            beta: config.beta,
        };
        for chunk in order.chunks(batch) {
            let (bx, bl);
            let (xb, lb) = if chunk.len() == n {
                (x, labels)
            } else {
                bx = x.select_rows(chunk);
                bl = labels.select_rows(chunk);
                (&bx, &bl)
            };
            let abort = |term: String, history: &TrainHistory| Error::TrainingAborted {
                epoch,
                term,
                history: Box::new(history.clone()),
            };

            let mut tape = Tape::new();
            let bound = params.blocks.bind(&mut tape);
            let nodes = match obj.build_loss(
                &mut tape,
                &params,
                &bound,
                xb,
                lb,
                &mut noise,
                config.alpha,
                config.beta,
                config.mc_samples,
            ) {
                Ok(nodes) => nodes,
                Err(Error::NonFinite { term }) => return Err(abort(term, &history)),
                Err(e) => return Err(e),
            };
            let breakdown = nodes.breakdown(&tape);
            if !breakdown.total.is_finite() {
                return Err(abort("total".into(), &history));
            }
            let grads = tape.backward(nodes.total)?;
            let grads = bound.gradients(&tape, &grads);
            if !grads_finite(&grads) {
                return Err(abort("gradient".into(), &history));
            }
            adam.step(&mut params.blocks, &grads)?;
            if !params.blocks.iter().all(|(_, m)| m.all_finite()) {
                return Err(abort("parameters".into(), &history));
            }
            weighted_add(&mut epoch_loss, &breakdown, chunk.len() as f64 / n as f64);
        }
        history.epochs.push(EpochRecord {
            epoch,
            loss: epoch_loss,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok((params, history))
}

/// Recovered distributions for `x` under trained `params`.
pub fn recover(params: &ModelParams, x: &Matrix) -> Result<Matrix> {
    objective::by_kind(params.objective).recover(params, x)
}

/// Trains on (X, L) and scores the recovery against known distributions.
pub fn train_and_evaluate(
    x: &Matrix,
    labels: &Matrix,
    truth: &Matrix,
    config: &TrainConfig,
) -> Result<(EvalReport, ModelParams, TrainHistory)> {
    let (params, history) = train(x, labels, config)?;
    let recovered = recover(&params, x)?;
    let report = evaluate(truth, &recovered)?;
    Ok((report, params, history))
}

#[derive(Debug, Clone)]
pub struct GridCell {
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub outcome: std::result::Result<EvalReport, String>,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
    /// Index into `cells` of the selected cell.
    pub best: Option<usize>,
}

impl GridResult {
    pub fn best_cell(&self) -> Option<&GridCell> {
        self.best.map(|i| &self.cells[i])
    }
}

/// Lower Chebyshev wins; then higher Intersection, smaller α, smaller β.
fn better(a: &GridCell, b: &GridCell) -> bool {
    let (Ok(ra), Ok(rb)) = (&a.outcome, &b.outcome) else {
        return a.outcome.is_ok();
    };
    ra.chebyshev
        .total_cmp(&rb.chebyshev)
        .then(rb.intersection.total_cmp(&ra.intersection))
        .then(a.alpha.total_cmp(&b.alpha))
        .then(a.beta.total_cmp(&b.beta))
        .is_lt()
}

/// Trains one model per (α, β) pair, cells in α-major order. Cell `k`
/// trains with seed `base.seed + k`. Failed cells are recorded, not fatal.
pub fn grid_search(
    dataset: &Dataset,
    binarize: &BinarizeStrategy,
    alphas: &[f64],
    betas: &[f64],
    base: &TrainConfig,
) -> Result<GridResult> {
    let truth = dataset
        .distributions
        .as_ref()
        .ok_or_else(|| Error::Data("grid search needs ground-truth distributions".into()))?;
    if alphas.is_empty() || betas.is_empty() {
        return Err(Error::Config("grid needs at least one alpha and one beta".into()));
    }
    let labels = dataset.logical_or_binarized(binarize)?;
    let x = &dataset.features;

    let specs: Vec<(f64, f64, u64)> = alphas
        .iter()
        .flat_map(|&a| betas.iter().map(move |&b| (a, b)))
        .enumerate()
        .map(|(k, (a, b))| (a, b, base.seed.wrapping_add(k as u64)))
        .collect();

    let cells: Vec<GridCell> = specs
        .par_iter()
        .map(|&(alpha, beta, seed)| {
            let config = TrainConfig {
                alpha,
                beta,
                seed,
                ..base.clone()
            };
            let outcome = train_and_evaluate(x, &labels, truth, &config)
                .map(|(report, _, _)| report)
                .map_err(|e| e.to_string());
            GridCell {
                alpha,
                beta,
                seed,
                outcome,
            }
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, cell) in cells.iter().enumerate() {
        if cell.outcome.is_err() {
            continue;
        }
        if best.is_none_or(|b| better(cell, &cells[b])) {
            best = Some(i);
        }
    }
    Ok(GridResult { cells, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = ParamSet::new();
        p.insert("w", Matrix::from_vec(1, 2, vec![1.0, -1.0]).unwrap());
        let mut g = ParamSet::new();
        g.insert("w", Matrix::from_vec(1, 2, vec![0.5, -3.0]).unwrap());
        let mut adam = Adam::new(0.1, &p);
        adam.step(&mut p, &g).unwrap();
        let w = p.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-7);
        assert!((w[1] + 0.9).abs() < 1e-7);
    }

    #[test]
    fn adam_leaves_zero_gradient_blocks_alone() {
        let mut p = ParamSet::new();
        p.insert("w", Matrix::filled(2, 2, 0.3));
        let g = p.zeros_like();
        let mut adam = Adam::new(0.1, &p);
        for _ in 0..5 {
            adam.step(&mut p, &g).unwrap();
        }
        assert_eq!(p.get("w").unwrap(), &Matrix::filled(2, 2, 0.3));
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut p = ParamSet::new();
        p.insert("w", Matrix::from_vec(1, 3, vec![3.0, -2.0, 0.5]).unwrap());
        let mut adam = Adam::new(0.05, &p);
        for _ in 0..2000 {
            let mut g = ParamSet::new();
            g.insert("w", p.get("w").unwrap().map(|v| 2.0 * v));
            adam.step(&mut p, &g).unwrap();
        }
        assert!(p.get("w").unwrap().data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().unwrap().is_empty());
        let warn = TrainConfig {
            alpha: 50.0,
            ..TrainConfig::default()
        };
        assert_eq!(warn.validate().unwrap().len(), 1);
        for bad in [
            TrainConfig {
                beta: -1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                mc_samples: 0,
                ..TrainConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn batch_parsing_and_serde() {
        assert_eq!("FULL".parse::<Batch>().unwrap(), Batch::Full);
        assert_eq!("full".parse::<Batch>().unwrap(), Batch::Full);
        assert_eq!("32".parse::<Batch>().unwrap(), Batch::Size(32));
        assert!("0".parse::<Batch>().is_err());
        assert!("half".parse::<Batch>().is_err());
        assert_eq!(serde_json::to_string(&Batch::Full).unwrap(), "\"FULL\"");
        assert_eq!(serde_json::from_str::<Batch>("16").unwrap(), Batch::Size(16));
    }

    #[test]
    fn tie_break_chain() {
        let report = |c: f64, i: f64| EvalReport {
            chebyshev: c,
            clark: 0.0,
            canberra: 0.0,
            kullback_leibler: 0.0,
            cosine: 1.0,
            intersection: i,
            n_instances: 1,
        };
        let cell = |a: f64, b: f64, r: EvalReport| GridCell {
            alpha: a,
            beta: b,
            seed: 0,
            outcome: Ok(r),
        };
        assert!(better(&cell(1.0, 1.0, report(0.1, 0.5)), &cell(0.1, 0.1, report(0.2, 0.9))));
        assert!(better(&cell(1.0, 1.0, report(0.1, 0.9)), &cell(0.1, 0.1, report(0.1, 0.5))));
        assert!(better(&cell(0.1, 1.0, report(0.1, 0.9)), &cell(1.0, 0.1, report(0.1, 0.9))));
        assert!(better(&cell(0.1, 0.1, report(0.1, 0.9)), &cell(0.1, 1.0, report(0.1, 0.9))));
        let failed = GridCell {
            alpha: 0.0,
            beta: 0.0,
            seed: 0,
            outcome: Err("x".into()),
        };
        assert!(!better(&failed, &cell(1.0, 1.0, report(0.9, 0.1))));
    }
}
