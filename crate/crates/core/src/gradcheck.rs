//! Central finite-difference checks of tape gradients.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamSet};

/// Denominator floor for the relative deviation, so entries whose true
/// gradient is ~0 are judged on absolute error instead of noise ratios.
pub const DEVIATION_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockDeviation {
    pub name: String,
    pub max_deviation: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub rtol: f64,
    pub blocks: Vec<BlockDeviation>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_deviation <= self.rtol)
    }

    pub fn worst(&self) -> Option<&BlockDeviation> {
        self.blocks
            .iter()
            .max_by(|a, b| a.max_deviation.total_cmp(&b.max_deviation))
    }
}

pub fn relative_deviation(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DEVIATION_FLOOR)
}

fn eval_loss<F>(build: &F, params: &ParamSet) -> Result<f64>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = build(&mut tape, &bound)?;
    let v = tape.value(loss);
    if !v.is_scalar() {
        return Err(Error::NonScalarLoss(v.shape()));
    }
    Ok(v.data()[0])
}

/// Loss value and reverse-mode gradient.
pub fn analytic_gradient<F>(build: &F, params: &ParamSet) -> Result<(f64, ParamSet)>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = build(&mut tape, &bound)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).data()[0], bound.gradients(&tape, &grads)))
}

/// Central differences `(f(w+h) − f(w−h)) / 2h`, one entry at a time.
pub fn numerical_gradient<F>(build: &F, params: &ParamSet, step: f64) -> Result<ParamSet>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<NodeId>,
{
    if !(step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {step}")));
    }
    let mut work = params.clone();
    let mut out = params.zeros_like();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let len = params.get(name)?.len();
        for k in 0..len {
            let orig = work.get(name)?.data()[k];
            work.get_mut(name)?.data_mut()[k] = orig + step;
            let plus = eval_loss(build, &work)?;
            work.get_mut(name)?.data_mut()[k] = orig - step;
            let minus = eval_loss(build, &work)?;
            work.get_mut(name)?.data_mut()[k] = orig;
            out.get_mut(name)?.data_mut()[k] = (plus - minus) / (2.0 * step);
        }
    }
    Ok(out)
}

/// Worst entry per block between two gradient sets with matching layout.
pub fn compare_gradients(analytic: &ParamSet, numeric: &ParamSet, rtol: f64) -> Result<GradCheckReport> {
    let mut blocks = Vec::with_capacity(analytic.len());
    for (name, a) in analytic.iter() {
        let n = numeric.get(name)?;
        if a.shape() != n.shape() {
            return Err(Error::shape("compare_gradients", a.shape(), n.shape()));
        }
        let mut worst = BlockDeviation {
            name: name.to_string(),
            max_deviation: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (k, (&av, &nv)) in a.data().iter().zip(n.data()).enumerate() {
            let dev = relative_deviation(av, nv);
            if dev > worst.max_deviation || k == 0 {
                worst.max_deviation = dev;
                worst.worst_index = k;
                worst.analytic = av;
                worst.numeric = nv;
            }
        }
        blocks.push(worst);
    }
    Ok(GradCheckReport { rtol, blocks })
}

/// Compares [`Tape::backward`] against central differences for every block.
///
/// `build` must construct the same scalar from the same parameters every
/// time; two evaluations at `params` that disagree are reported as
/// [`Error::NonDeterministic`].
pub fn grad_check<F>(build: F, params: &ParamSet, step: f64, rtol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<NodeId>,
{
    if !(step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {step}")));
    }
    let first = eval_loss(&build, params)?;
    let second = eval_loss(&build, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }
    let (_, analytic) = analytic_gradient(&build, params)?;
    let numeric = numerical_gradient(&build, params, step)?;
    compare_gradients(&analytic, &numeric, rtol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use std::cell::Cell;

    fn single(name: &str, m: Matrix) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(name, m);
        p
    }

    #[test]
    fn identity_loss_has_zero_deviation() {
        let p = single("w", Matrix::scalar(0.37));
        let report = grad_check(|_t, b| b.id("w"), &p, 1e-5, 1e-4).unwrap();
        assert!(report.passed());
        assert!(report.blocks[0].max_deviation < 1e-9);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let p = single("w", Matrix::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap());
        let build = |t: &mut Tape, b: &BoundParams| {
            let w = b.id("w")?;
            let e = t.exp(w)?;
            t.sum(e)
        };
        let (_, mut analytic) = analytic_gradient(&build, &p).unwrap();
        let numeric = numerical_gradient(&build, &p, 1e-5).unwrap();
        assert!(compare_gradients(&analytic, &numeric, 1e-4).unwrap().passed());
        analytic.get_mut("w").unwrap().data_mut().iter_mut().for_each(|v| *v *= 1.1);
        let bad = compare_gradients(&analytic, &numeric, 1e-4).unwrap();
        assert!(!bad.passed());
        assert!(bad.worst().unwrap().max_deviation > 0.05);
    }

    #[test]
    fn nondeterministic_builder_is_detected() {
        let p = single("w", Matrix::scalar(1.0));
        let calls = Cell::new(0u32);
        let build = |t: &mut Tape, b: &BoundParams| {
            calls.set(calls.get() + 1);
            let c = t.constant(Matrix::scalar(calls.get() as f64));
            let w = b.id("w")?;
            let s = t.mul(w, c)?;
            t.sum(s)
        };
        assert!(matches!(
            grad_check(build, &p, 1e-5, 1e-4),
            Err(Error::NonDeterministic { .. })
        ));
    }

    #[test]
    fn non_positive_step_is_rejected() {
        let p = single("w", Matrix::scalar(1.0));
        assert!(matches!(grad_check(|_t, b| b.id("w"), &p, 0.0, 1e-4), Err(Error::Config(_))));
    }
}
