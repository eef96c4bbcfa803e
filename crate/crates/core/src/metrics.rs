//! Label-distribution recovery measures.
//!
//! Four distances (Chebyshev, Clark, Canberra, Kullback-Leibler; lower is
//! better) and two similarities (Cosine, Intersection; higher is better),
//! each averaged over instances.

use serde::{Deserialize, Serialize};

use crate::data::{check_simplex_rows, SIMPLEX_TOL};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Lower bound applied to predicted entries inside logarithms and
/// Clark/Canberra denominators.
pub const PRED_CLAMP: f64 = 1e-12;

pub trait Measure: Send + Sync {
    /// Key used in reports, e.g. `kullback_leibler`.
    fn name(&self) -> &'static str;
    fn higher_is_better(&self) -> bool;
    /// Value for a single (truth, prediction) pair of distributions.
    fn instance(&self, truth: &[f64], pred: &[f64]) -> f64;
}

fn clamp(p: f64) -> f64 {
    p.max(PRED_CLAMP)
}

pub struct Chebyshev;
pub struct Clark;
pub struct Canberra;
pub struct KullbackLeibler;
pub struct Cosine;
pub struct Intersection;

impl Measure for Chebyshev {
    fn name(&self) -> &'static str {
        "chebyshev"
    }
    fn higher_is_better(&self) -> bool {
        false
    }
    fn instance(&self, d: &[f64], p: &[f64]) -> f64 {
        d.iter().zip(p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

impl Measure for Clark {
    fn name(&self) -> &'static str {
        "clark"
    }
    fn higher_is_better(&self) -> bool {
        false
    }
    fn instance(&self, d: &[f64], p: &[f64]) -> f64 {
        d.iter()
            .zip(p)
            .map(|(&a, &b)| {
                if a == 0.0 && b == 0.0 {
                    0.0
                } else {
                    let num = a - b;
                    let den = a + clamp(b);
                    num * num / (den * den)
                }
            })
            .sum::<f64>()
            .sqrt()
    }
}

impl Measure for Canberra {
    fn name(&self) -> &'static str {
        "canberra"
    }
    fn higher_is_better(&self) -> bool {
        false
    }
    fn instance(&self, d: &[f64], p: &[f64]) -> f64 {
        d.iter()
            .zip(p)
            .map(|(&a, &b)| {
                if a == 0.0 && b == 0.0 {
                    0.0
                } else {
                    (a - b).abs() / (a + clamp(b))
                }
            })
            .sum()
    }
}

impl Measure for KullbackLeibler {
    fn name(&self) -> &'static str {
        "kullback_leibler"
    }
    fn higher_is_better(&self) -> bool {
        false
    }
    fn instance(&self, d: &[f64], p: &[f64]) -> f64 {
        // 0 · ln 0 = 0
        d.iter()
            .zip(p)
            .filter(|(&a, _)| a > 0.0)
            .map(|(&a, &b)| a * (a / clamp(b)).ln())
            .sum()
    }
}

impl Measure for Cosine {
    fn name(&self) -> &'static str {
        "cosine"
    }
    fn higher_is_better(&self) -> bool {
        true
    }
    fn instance(&self, d: &[f64], p: &[f64]) -> f64 {
        let dot: f64 = d.iter().zip(p).map(|(a, b)| a * b).sum();
        let nd = d.iter().map(|a| a * a).sum::<f64>().sqrt();
        let np = p.iter().map(|b| b * b).sum::<f64>().sqrt();
        dot / (nd * np)
    }
}

impl Measure for Intersection {
    fn name(&self) -> &'static str {
        "intersection"
    }
    fn higher_is_better(&self) -> bool {
        true
    }
    fn instance(&self, d: &[f64], p: &[f64]) -> f64 {
        d.iter().zip(p).map(|(&a, &b)| a.min(b)).sum()
    }
}

static MEASURES: [&dyn Measure; 6] = [
    &Chebyshev,
    &Clark,
    &Canberra,
    &KullbackLeibler,
    &Cosine,
    &Intersection,
];

/// The six measures in report order.
pub fn measures() -> &'static [&'static dyn Measure; 6] {
    &MEASURES
}

pub fn measure_by_name(name: &str) -> Result<&'static dyn Measure> {
    MEASURES
        .iter()
        .copied()
        .find(|m| m.name() == name)
        .ok_or_else(|| Error::UnknownStrategy {
            kind: "metric",
            name: name.to_string(),
            available: METRIC_NAMES.join(", "),
        })
}

pub const METRIC_NAMES: [&str; 6] = [
    "chebyshev",
    "clark",
    "canberra",
    "kullback_leibler",
    "cosine",
    "intersection",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub chebyshev: f64,
    pub clark: f64,
    pub canberra: f64,
    pub kullback_leibler: f64,
    pub cosine: f64,
    pub intersection: f64,
    pub n_instances: usize,
}

impl EvalReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "chebyshev" => self.chebyshev,
            "clark" => self.clark,
            "canberra" => self.canberra,
            "kullback_leibler" => self.kullback_leibler,
            "cosine" => self.cosine,
            "intersection" => self.intersection,
            _ => return None,
        })
    }

    /// Values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [f64; 6] {
        [
            self.chebyshev,
            self.clark,
            self.canberra,
            self.kullback_leibler,
            self.cosine,
            self.intersection,
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    /// Column names of [`EvalReport::csv_row`].
    pub fn csv_header() -> Vec<String> {
        let mut h = vec!["dataset".to_string(), "method".to_string()];
        h.extend(METRIC_NAMES.iter().map(|s| s.to_string()));
        h
    }

    pub fn csv_row(&self, dataset: &str, method: &str) -> Vec<String> {
        let mut r = vec![dataset.to_string(), method.to_string()];
        r.extend(self.values().iter().map(|v| format!("{v}")));
        r
    }
}

fn simplex_error(which: &str, e: Error) -> Error {
    match e {
        Error::Data(msg) => Error::Data(format!("{which} {msg}")),
        other => other,
    }
}

/// Mean of each measure over the rows of `truth` and `pred`.
pub fn evaluate(truth: &Matrix, pred: &Matrix) -> Result<EvalReport> {
    if truth.shape() != pred.shape() {
        return Err(Error::shape("evaluate", truth.shape(), pred.shape()));
    }
    if truth.rows() == 0 {
        return Err(Error::Data("cannot evaluate zero instances".into()));
    }
    check_simplex_rows(truth, SIMPLEX_TOL).map_err(|e| simplex_error("truth", e))?;
    check_simplex_rows(pred, SIMPLEX_TOL).map_err(|e| simplex_error("prediction", e))?;

    let n = truth.rows();
    let mut sums = [0.0; 6];
    for (d, p) in truth.row_iter().zip(pred.row_iter()) {
        for (s, m) in sums.iter_mut().zip(MEASURES.iter()) {
            *s += m.instance(d, p);
        }
    }
    let mean = |k: usize| sums[k] / n as f64;
    Ok(EvalReport {
        chebyshev: mean(0),
        clark: mean(1),
        canberra: mean(2),
        kullback_leibler: mean(3),
        cosine: mean(4),
        intersection: mean(5),
        n_instances: n,
    })
}

/// Mean rank of each method across datasets. `scores` is methods × datasets;
/// the best method on a dataset gets rank 1 and tied methods share the mean
/// of the ranks they span.
pub fn average_rank(scores: &Matrix, higher_is_better: bool) -> Result<Vec<f64>> {
    let (methods, datasets) = scores.shape();
    if methods == 0 || datasets == 0 {
        return Err(Error::Data("rank table is empty".into()));
    }
    if !scores.all_finite() {
        return Err(Error::Data("rank table has missing or non-finite cells".into()));
    }
    let mut totals = vec![0.0; methods];
    for j in 0..datasets {
        let mut order: Vec<usize> = (0..methods).collect();
        let key = |i: usize| {
            let v = scores.get(i, j);
            if higher_is_better {
                -v
            } else {
                v
            }
        };
        order.sort_by(|&a, &b| key(a).total_cmp(&key(b)));
        let mut start = 0;
        while start < methods {
            let mut end = start + 1;
            while end < methods && key(order[end]) == key(order[start]) {
                end += 1;
            }
            // positions start..end hold ranks start+1..=end
            let rank = (start + 1 + end) as f64 / 2.0;
            for &i in &order[start..end] {
                totals[i] += rank;
            }
            start = end;
        }
    }
    Ok(totals.into_iter().map(|t| t / datasets as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identical_inputs_are_perfect() {
        let d = m(&[&[0.2, 0.3, 0.5], &[0.6, 0.4, 0.0]]);
        let r = evaluate(&d, &d).unwrap();
        assert_eq!(r.chebyshev, 0.0);
        assert_eq!(r.clark, 0.0);
        assert_eq!(r.canberra, 0.0);
        assert!(r.kullback_leibler.abs() < 1e-12);
        assert!((r.cosine - 1.0).abs() < 1e-12);
        assert!((r.intersection - 1.0).abs() < 1e-12);
        assert_eq!(r.n_instances, 2);
    }

    #[test]
    fn disjoint_support_extremes() {
        let r = evaluate(&m(&[&[1.0, 0.0]]), &m(&[&[0.0, 1.0]])).unwrap();
        assert_eq!(r.intersection, 0.0);
        assert_eq!(r.chebyshev, 1.0);
        assert_eq!(r.cosine, 0.0);
        assert!(r.kullback_leibler.is_finite() && r.kullback_leibler > 20.0);
        assert!(r.all_finite());
    }

    #[test]
    fn shape_and_simplex_errors() {
        assert!(matches!(
            evaluate(&m(&[&[0.5, 0.5]]), &m(&[&[1.0, 0.0, 0.0]])),
            Err(Error::Shape { .. })
        ));
        let err = evaluate(&m(&[&[0.5, 0.5], &[0.5, 0.5]]), &m(&[&[0.5, 0.5], &[0.9, 0.5]])).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn rank_examples() {
        let s = m(&[&[0.1], &[0.2], &[0.3]]);
        assert_eq!(average_rank(&s, false).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(average_rank(&s, true).unwrap(), vec![3.0, 2.0, 1.0]);
        let tied = m(&[&[0.5], &[0.5], &[0.9]]);
        assert_eq!(average_rank(&tied, false).unwrap(), vec![1.5, 1.5, 3.0]);
    }

    #[test]
    fn registry_order_matches_report_order() {
        let names: Vec<&str> = measures().iter().map(|m| m.name()).collect();
        assert_eq!(names, METRIC_NAMES);
        assert!(measure_by_name("cosine").unwrap().higher_is_better());
        assert!(measure_by_name("sorensen").is_err());
    }
}
