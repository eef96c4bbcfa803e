//! Datasets and their CSV form.
//!
//! A dataset file has a header row and three column families: features
//! `f:<name>`, ground-truth distributions `d:<label>` and logical labels
//! `l:<label>`. Features are required, plus at least one of the label
//! families. When both label families are present they must name the same
//! labels in the same order.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::binarize::{binarize, BinarizeStrategy};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const FEATURE_PREFIX: &str = "f:";
pub const DISTRIBUTION_PREFIX: &str = "d:";
pub const LOGICAL_PREFIX: &str = "l:";

/// Simplex tolerance for stored distributions.
pub const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub feature_names: Vec<String>,
    pub label_names: Vec<String>,
    pub features: Matrix,
    pub distributions: Option<Matrix>,
    pub logical: Option<Matrix>,
}

/// Fails on the first row that is not a distribution within `tol`.
pub fn check_simplex_rows(m: &Matrix, tol: f64) -> Result<()> {
    for (i, row) in m.row_iter().enumerate() {
        if let Some(bad) = row.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Data(format!("row {}: negative or non-finite entry {bad}", i + 1)));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > tol {
            return Err(Error::Data(format!("row {}: distribution sums to {s}", i + 1)));
        }
    }
    Ok(())
}

/// Fails on the first row with a non-binary entry or no relevant label.
pub fn check_logical_rows(m: &Matrix) -> Result<()> {
    for (i, row) in m.row_iter().enumerate() {
        if let Some(bad) = row.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data(format!("row {}: logical label {bad} is not 0 or 1", i + 1)));
        }
        if !row.contains(&1.0) {
            return Err(Error::Data(format!("row {}: no relevant label", i + 1)));
        }
    }
    Ok(())
}

impl Dataset {
    pub fn n_instances(&self) -> usize {
        self.features.rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_labels(&self) -> usize {
        self.label_names.len()
    }

    /// Checks sizes and the distribution / logical-label invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_instances();
        if self.feature_names.len() != self.features.cols() {
            return Err(Error::Data("feature names do not match feature columns".into()));
        }
        if self.distributions.is_none() && self.logical.is_none() {
            return Err(Error::Data("dataset needs distributions or logical labels".into()));
        }
        for (what, m) in [("distributions", &self.distributions), ("logical labels", &self.logical)] {
            if let Some(m) = m {
                if m.rows() != n || m.cols() != self.n_labels() {
                    return Err(Error::Data(format!(
                        "{what} are {:?}, expected ({n}, {})",
                        m.shape(),
                        self.n_labels()
                    )));
                }
            }
        }
        if !self.features.all_finite() {
            return Err(Error::Data("non-finite feature value".into()));
        }
        if let Some(d) = &self.distributions {
            check_simplex_rows(d, SIMPLEX_TOL)?;
        }
        if let Some(l) = &self.logical {
            check_logical_rows(l)?;
        }
        Ok(())
    }

    /// Logical labels, deriving them from the distributions when the file
    /// did not carry any.
    pub fn logical_or_binarized(&self, strategy: &BinarizeStrategy) -> Result<Matrix> {
        match (&self.logical, &self.distributions) {
            (Some(l), _) => Ok(l.clone()),
            (None, Some(d)) => binarize(d, strategy),
            (None, None) => Err(Error::Data("dataset has no label columns".into())),
        }
    }

    /// Z-scores every feature column in place (population variance).
    /// Constant columns become all zeros.
    pub fn standardize(&mut self) {
        standardize_columns(&mut self.features);
    }
}

pub fn standardize_columns(m: &mut Matrix) {
    let (n, q) = m.shape();
    if n == 0 {
        return;
    }
    for j in 0..q {
        let mean = (0..n).map(|i| m.get(i, j)).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (m.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for i in 0..n {
            let z = if sd > 0.0 { (m.get(i, j) - mean) / sd } else { 0.0 };
            m.set(i, j, z);
        }
    }
}

enum Column {
    Feature,
    Distribution,
    Logical,
}

fn parse_err(path: &Path, row: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        detail: detail.into(),
    }
}

/// Reads and validates a dataset without touching feature scales.
pub fn read_dataset_from<R: Read>(reader: R, source: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();

    let mut columns = Vec::with_capacity(headers.len());
    let (mut feature_names, mut d_names, mut l_names) = (Vec::new(), Vec::new(), Vec::new());
    for h in headers.iter() {
        if let Some(name) = h.strip_prefix(FEATURE_PREFIX) {
            feature_names.push(name.to_string());
            columns.push(Column::Feature);
        } else if let Some(name) = h.strip_prefix(DISTRIBUTION_PREFIX) {
            d_names.push(name.to_string());
            columns.push(Column::Distribution);
        } else if let Some(name) = h.strip_prefix(LOGICAL_PREFIX) {
            l_names.push(name.to_string());
            columns.push(Column::Logical);
        } else {
            return Err(parse_err(source, 0, format!("unrecognised column `{h}` (expected f:, d: or l: prefix)")));
        }
    }
    if feature_names.is_empty() {
        return Err(parse_err(source, 0, "missing feature columns (f:<name>)"));
    }
    if d_names.is_empty() && l_names.is_empty() {
        return Err(parse_err(source, 0, "missing label columns (d:<label> or l:<label>)"));
    }
    if !d_names.is_empty() && !l_names.is_empty() && d_names != l_names {
        return Err(parse_err(source, 0, "d: and l: columns name different labels"));
    }

    let (mut x, mut d, mut l) = (Vec::new(), Vec::new(), Vec::new());
    let mut n = 0;
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| parse_err(source, row, e.to_string()))?;
        if record.len() != columns.len() {
            return Err(parse_err(
                source,
                row,
                format!("expected {} cells, found {}", columns.len(), record.len()),
            ));
        }
        for ((cell, col), header) in record.iter().zip(&columns).zip(headers.iter()) {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(source, row, format!("column `{header}`: `{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(source, row, format!("column `{header}`: non-finite value")));
            }
            match col {
                Column::Feature => x.push(v),
                Column::Distribution => d.push(v),
                Column::Logical => l.push(v),
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(parse_err(source, 0, "no data rows"));
    }

    let features = Matrix::from_vec(n, feature_names.len(), x)?;
    let distributions = if d_names.is_empty() {
        None
    } else {
        Some(Matrix::from_vec(n, d_names.len(), d)?)
    };
    let logical = if l_names.is_empty() {
        None
    } else {
        Some(Matrix::from_vec(n, l_names.len(), l)?)
    };
    let with_row = |e: Error| match e {
        Error::Data(msg) => {
            let row = msg
                .strip_prefix("row ")
                .and_then(|r| r.split(':').next())
                .and_then(|r| r.parse().ok())
                .unwrap_or(0);
            parse_err(source, row, msg)
        }
        other => other,
    };
    if let Some(d) = &distributions {
        check_simplex_rows(d, SIMPLEX_TOL).map_err(with_row)?;
    }
    if let Some(l) = &logical {
        check_logical_rows(l).map_err(with_row)?;
    }

    let name = source
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Dataset {
        name,
        feature_names,
        label_names: if d_names.is_empty() { l_names } else { d_names },
        features,
        distributions,
        logical,
    })
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_dataset_from(file, path)
}

/// Reads, validates and standardises a dataset file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut ds = read_dataset(path)?;
    ds.standardize();
    Ok(ds)
}

fn fmt_f64(v: f64) -> String {
    // Display prints the shortest string that parses back to the same bits
    format!("{v}")
}

pub fn write_dataset_to<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ds.feature_names.iter().map(|n| format!("{FEATURE_PREFIX}{n}")).collect();
    if ds.distributions.is_some() {
        header.extend(ds.label_names.iter().map(|n| format!("{DISTRIBUTION_PREFIX}{n}")));
    }
    if ds.logical.is_some() {
        header.extend(ds.label_names.iter().map(|n| format!("{LOGICAL_PREFIX}{n}")));
    }
    wtr.write_record(&header)?;
    for i in 0..ds.n_instances() {
        let mut rec: Vec<String> = ds.features.row(i).iter().map(|&v| fmt_f64(v)).collect();
        if let Some(d) = &ds.distributions {
            rec.extend(d.row(i).iter().map(|&v| fmt_f64(v)));
        }
        if let Some(l) = &ds.logical {
            rec.extend(l.row(i).iter().map(|&v| fmt_f64(v)));
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_dataset_to(ds, std::io::BufWriter::new(file))
}

/// Writes `d:<label>` columns only, one row per instance.
pub fn write_distributions_to<W: Write>(label_names: &[String], d: &Matrix, writer: W) -> Result<()> {
    if label_names.len() != d.cols() {
        return Err(Error::shape("write_distributions", d.shape(), (d.rows(), label_names.len())));
    }
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(label_names.iter().map(|n| format!("{DISTRIBUTION_PREFIX}{n}")))?;
    for row in d.row_iter() {
        wtr.write_record(row.iter().map(|&v| fmt_f64(v)))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_distributions(label_names: &[String], d: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_distributions_to(label_names, d, std::io::BufWriter::new(file))
}

/// Reads a file of `d:` columns (other column families are ignored).
pub fn read_distributions(path: impl AsRef<Path>) -> Result<(Vec<String>, Matrix)> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let picks: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix(DISTRIBUTION_PREFIX).map(|n| (i, n.to_string())))
        .collect();
    if picks.is_empty() {
        return Err(parse_err(path, 0, "no d:<label> columns"));
    }
    let mut data = Vec::new();
    let mut n = 0;
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| parse_err(path, row, e.to_string()))?;
        for (i, name) in &picks {
            let cell = record.get(*i).ok_or_else(|| parse_err(path, row, "short row"))?;
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(path, row, format!("column `d:{name}`: `{cell}` is not a number")))?;
            data.push(v);
        }
        n += 1;
    }
    let m = Matrix::from_vec(n, picks.len(), data)?;
    Ok((picks.into_iter().map(|(_, n)| n).collect(), m))
}

/// `D = softmax(X·W + b)` row by row.
pub fn softmax_labels(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    let mut logits = x.matmul(w)?;
    if b.len() != logits.cols() {
        return Err(Error::shape("softmax_labels", (1, b.len()), logits.shape()));
    }
    for i in 0..logits.rows() {
        let row = logits.row_mut(i);
        row.iter_mut().zip(b).for_each(|(v, bj)| *v += bj);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    Ok(logits)
}

/// Synthetic dataset with known distributions: `X ~ U[-1, 1]^q`,
/// `W, b ~ N(0, 1)` and `D = softmax(X·W + b)`. No logical labels.
pub fn generate_synthetic(n: usize, q: usize, c: usize, seed: u64) -> Result<Dataset> {
    if n < 2 || q < 2 || c < 2 {
        return Err(Error::Config(format!("synthetic data needs n, q, c >= 2, got ({n}, {q}, {c})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Matrix::from_fn(q, c, |_, _| rng.sample(StandardNormal));
    let b: Vec<f64> = (0..c).map(|_| rng.sample(StandardNormal)).collect();
    let x = Matrix::from_fn(n, q, |_, _| rng.random_range(-1.0..=1.0));
    let d = softmax_labels(&x, &w, &b)?;
    Ok(Dataset {
        name: format!("synthetic-{seed}"),
        feature_names: (1..=q).map(|j| format!("x{j}")).collect(),
        label_names: (1..=c).map(|j| format!("y{j}")).collect(),
        features: x,
        distributions: Some(d),
        logical: None,
    })
}
