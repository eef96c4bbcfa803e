//! Turning ground-truth label distributions into logical labels.
//!
//! Every strategy guarantees at least one relevant label per row: a row that
//! would come out empty gets its argmax (lowest index on ties) set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::check_simplex_rows;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub trait Binarizer: Send + Sync {
    fn name(&self) -> &'static str;

    /// Writes 0/1 relevance for one distribution row into `out`, before the
    /// empty-row fallback.
    fn mark(&self, row: &[f64], out: &mut [f64]) -> Result<()>;
}

/// `d > 1/c`, the mean of a simplex row.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanThreshold;

impl Binarizer for MeanThreshold {
    fn name(&self) -> &'static str {
        "mean-threshold"
    }

    fn mark(&self, row: &[f64], out: &mut [f64]) -> Result<()> {
        let mean = 1.0 / row.len() as f64;
        for (o, &d) in out.iter_mut().zip(row) {
            *o = if d > mean { 1.0 } else { 0.0 };
        }
        Ok(())
    }
}

/// The `k` largest entries.
#[derive(Debug, Clone, Copy)]
pub struct TopK {
    pub k: usize,
}

impl Binarizer for TopK {
    fn name(&self) -> &'static str {
        "top-k"
    }

    fn mark(&self, row: &[f64], out: &mut [f64]) -> Result<()> {
        if self.k == 0 || self.k > row.len() {
            return Err(Error::Config(format!(
                "top-k needs 1 <= k <= {} labels, got k = {}",
                row.len(),
                self.k
            )));
        }
        let mut order: Vec<usize> = (0..row.len()).collect();
        // stable sort keeps lower indices first among equal values
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        out.iter_mut().for_each(|o| *o = 0.0);
        for &j in &order[..self.k] {
            out[j] = 1.0;
        }
        Ok(())
    }
}

/// `d > theta` for a fixed `theta` in (0, 1).
#[derive(Debug, Clone, Copy)]
pub struct FixedThreshold {
    pub theta: f64,
}

impl Binarizer for FixedThreshold {
    fn name(&self) -> &'static str {
        "fixed-threshold"
    }

    fn mark(&self, row: &[f64], out: &mut [f64]) -> Result<()> {
        for (o, &d) in out.iter_mut().zip(row) {
            *o = if d > self.theta { 1.0 } else { 0.0 };
        }
        Ok(())
    }
}

/// Serializable choice of binarizer. Parses from `mean-threshold`,
/// `top-k:<k>` and `fixed-threshold:<theta>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BinarizeStrategy {
    #[default]
    MeanThreshold,
    TopK {
        k: usize,
    },
    FixedThreshold {
        theta: f64,
    },
}

impl BinarizeStrategy {
    pub fn build(&self) -> Result<Box<dyn Binarizer>> {
        match *self {
            BinarizeStrategy::MeanThreshold => Ok(Box::new(MeanThreshold)),
            BinarizeStrategy::TopK { k } => {
                if k == 0 {
                    return Err(Error::Config("top-k needs k >= 1".into()));
                }
                Ok(Box::new(TopK { k }))
            }
            BinarizeStrategy::FixedThreshold { theta } => {
                if !(theta > 0.0 && theta < 1.0) {
                    return Err(Error::Config(format!(
                        "fixed-threshold needs theta in (0, 1), got {theta}"
                    )));
                }
                Ok(Box::new(FixedThreshold { theta }))
            }
        }
    }
}

pub const STRATEGY_NAMES: [&str; 3] = ["mean-threshold", "top-k", "fixed-threshold"];

impl FromStr for BinarizeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let bad_arg = |what: &str| Error::Config(format!("`{s}`: {what}"));
        let strategy = match (name, arg) {
            ("mean-threshold", None) => BinarizeStrategy::MeanThreshold,
            ("top-k", Some(a)) => BinarizeStrategy::TopK {
                k: a.parse().map_err(|_| bad_arg("k must be a positive integer"))?,
            },
            ("fixed-threshold", Some(a)) => BinarizeStrategy::FixedThreshold {
                theta: a.parse().map_err(|_| bad_arg("theta must be a number"))?,
            },
            ("top-k", None) | ("fixed-threshold", None) => {
                return Err(bad_arg("missing parameter, e.g. top-k:2 or fixed-threshold:0.3"))
            }
            ("mean-threshold", Some(_)) => return Err(bad_arg("mean-threshold takes no parameter")),
            _ => {
                return Err(Error::UnknownStrategy {
                    kind: "binarization strategy",
                    name: name.to_string(),
                    available: STRATEGY_NAMES.join(", "),
                })
            }
        };
        strategy.build()?;
        Ok(strategy)
    }
}

impl fmt::Display for BinarizeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinarizeStrategy::MeanThreshold => write!(f, "mean-threshold"),
            BinarizeStrategy::TopK { k } => write!(f, "top-k:{k}"),
            BinarizeStrategy::FixedThreshold { theta } => write!(f, "fixed-threshold:{theta}"),
        }
    }
}

/// Logical labels for every row of `distributions`.
pub fn binarize(distributions: &Matrix, strategy: &BinarizeStrategy) -> Result<Matrix> {
    let binarizer = strategy.build()?;
    check_simplex_rows(distributions, 1e-6)?;
    let mut out = Matrix::zeros(distributions.rows(), distributions.cols());
    for i in 0..distributions.rows() {
        let row = distributions.row(i);
        let marks = out.row_mut(i);
        binarizer.mark(row, marks)?;
        if marks.iter().all(|&v| v == 0.0) {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            marks[best] = 1.0;
        }
    }
    Ok(out)
}
