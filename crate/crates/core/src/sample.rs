//! Sample sets, prior bounds and the CSV sample format.
//!
//! A sample file is UTF-8 CSV with a header row. Every column is a
//! dimension except the optional `log_post` (unnormalized log-posterior)
//! and `weight` columns.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_POST_COLUMN: &str = "log_post";
pub const WEIGHT_COLUMN: &str = "weight";

/// N draws in D dimensions, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    n: usize,
    d: usize,
    positions: Vec<f64>,
    log_post: Option<Vec<f64>>,
    weights: Option<Vec<f64>>,
    names: Option<Vec<String>>,
}

impl SampleSet {
    /// Validates raw rows. Weights, when given, are renormalized to sum to one.
    pub fn new(
        rows: Vec<Vec<f64>>,
        log_post: Option<Vec<f64>>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidSample("no rows".into()));
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(Error::InvalidSample("zero dimensions".into()));
        }
        let mut positions = Vec::with_capacity(n * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::InvalidSample(format!(
                    "row {i} has {} columns, expected {d}",
                    row.len()
                )));
            }
            positions.extend_from_slice(row);
        }
        Self::from_flat(positions, d, log_post, weights)
    }

    pub fn from_flat(
        positions: Vec<f64>,
        d: usize,
        log_post: Option<Vec<f64>>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        if d == 0 || positions.is_empty() || positions.len() % d != 0 {
            return Err(Error::InvalidSample("matrix is not rectangular".into()));
        }
        let n = positions.len() / d;
        if let Some(i) = positions.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSample(format!(
                "non-finite entry at row {}, column {}",
                i / d,
                i % d
            )));
        }
        if let Some(lp) = &log_post {
            if lp.len() != n {
                return Err(Error::InvalidSample(format!(
                    "{} log-posterior values for {n} rows",
                    lp.len()
                )));
            }
            if lp.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::InvalidSample("log-posterior contains NaN or +inf".into()));
            }
        }
        let weights = match weights {
            None => None,
            Some(w) => Some(normalize_weights(w, n)?),
        };
        Ok(Self { n, d, positions, log_post, weights, names: None })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.d {
            return Err(Error::InvalidInput(format!(
                "{} names for {} dimensions",
                names.len(),
                self.d
            )));
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.positions[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.positions.chunks_exact(self.d)
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn log_post(&self) -> Option<&[f64]> {
        self.log_post.as_deref()
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    /// Column names, falling back to `x1..xD`.
    pub fn column_names(&self) -> Vec<String> {
        match &self.names {
            Some(n) => n.clone(),
            None => (1..=self.d).map(|j| format!("x{j}")).collect(),
        }
    }

    /// Rows at the given indices, carrying log-posteriors along. Weights are dropped.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let mut pos = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            pos.extend_from_slice(self.row(i));
        }
        let lp = self.log_post.as_ref().map(|lp| idx.iter().map(|&i| lp[i]).collect());
        let mut out = Self::from_flat(pos, self.d, lp, None)?;
        out.names = self.names.clone();
        Ok(out)
    }

    /// Keeps only the listed dimensions.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        let mut pos = Vec::with_capacity(self.n * cols.len());
        for r in self.rows() {
            pos.extend(cols.iter().map(|&j| r[j]));
        }
        let mut out = Self::from_flat(pos, cols.len(), self.log_post.clone(), self.weights.clone())?;
        out.names = self.names.as_ref().map(|n| cols.iter().map(|&j| n[j].clone()).collect());
        Ok(out)
    }

    pub fn with_log_post(mut self, lp: Vec<f64>) -> Result<Self> {
        if lp.len() != self.n {
            return Err(Error::InvalidSample("log-posterior length mismatch".into()));
        }
        self.log_post = Some(lp);
        Ok(self)
    }

    pub fn with_weights(mut self, w: Vec<f64>) -> Result<Self> {
        self.weights = Some(normalize_weights(w, self.n)?);
        Ok(self)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(|r| r.to_vec()).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for r in self.rows() {
            for (mj, v) in m.iter_mut().zip(r) {
                *mj += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n as f64);
        m
    }

    /// Maximum-likelihood (divide by N) covariance, row-major D×D.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.d;
        let m = self.mean();
        let mut c = vec![0.0; d * d];
        for r in self.rows() {
            for a in 0..d {
                let da = r[a] - m[a];
                for b in a..d {
                    c[a * d + b] += da * (r[b] - m[b]);
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let v = c[a * d + b] / self.n as f64;
                c[a * d + b] = v;
                c[b * d + a] = v;
            }
        }
        c
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let lp_col = headers.iter().position(|h| h == LOG_POST_COLUMN);
        let w_col = headers.iter().position(|h| h == WEIGHT_COLUMN);
        let dim_cols: Vec<usize> =
            (0..headers.len()).filter(|&c| Some(c) != lp_col && Some(c) != w_col).collect();
        let mut pos = Vec::new();
        let mut lp = Vec::new();
        let mut w = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |c: usize| -> Result<f64> {
                let s = rec.get(c).unwrap_or("");
                s.parse::<f64>().map_err(|_| {
                    Error::InvalidSample(format!("row {}: cannot parse `{s}` in column {}", line + 1, headers[c]))
                })
            };
            for &c in &dim_cols {
                pos.push(parse(c)?);
            }
            if let Some(c) = lp_col {
                lp.push(parse(c)?);
            }
            if let Some(c) = w_col {
                w.push(parse(c)?);
            }
        }
        let set = Self::from_flat(
            pos,
            dim_cols.len(),
            lp_col.map(|_| lp),
            w_col.map(|_| w),
        )?;
        set.with_names(dim_cols.iter().map(|&c| headers[c].clone()).collect())
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = self.column_names();
        if self.log_post.is_some() {
            header.push(LOG_POST_COLUMN.into());
        }
        if self.weights.is_some() {
            header.push(WEIGHT_COLUMN.into());
        }
        wtr.write_record(&header)?;
        for i in 0..self.n {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| fmt_f64(*v)).collect();
            if let Some(lp) = &self.log_post {
                rec.push(fmt_f64(lp[i]));
            }
            if let Some(w) = &self.weights {
                rec.push(fmt_f64(w[i]));
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn normalize_weights(w: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    if w.len() != n {
        return Err(Error::InvalidWeight(format!("{} weights for {n} rows", w.len())));
    }
    if let Some(v) = w.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidWeight(format!("weight {v} is negative or non-finite")));
    }
    let s: f64 = w.iter().sum();
    if s <= 0.0 {
        return Err(Error::InvalidWeight("all weights are zero".into()));
    }
    Ok(w.into_iter().map(|v| v / s).collect())
}

/// Box support: `lower[j] < upper[j]`, either side possibly infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    #[serde(with = "crate::io::num_vec")]
    lower: Vec<f64>,
    #[serde(with = "crate::io::num_vec")]
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidBounds("lower/upper length mismatch".into()));
        }
        for (j, (a, b)) in lower.iter().zip(&upper).enumerate() {
            if a.is_nan() || b.is_nan() || a >= b || *a == f64::INFINITY || *b == f64::NEG_INFINITY {
                return Err(Error::InvalidBounds(format!("dimension {j}: need lower < upper, got [{a}, {b}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(d: usize) -> Self {
        Self { lower: vec![f64::NEG_INFINITY; d], upper: vec![f64::INFINITY; d] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn is_unbounded(&self) -> bool {
        self.lower.iter().all(|v| v.is_infinite()) && self.upper.iter().all(|v| v.is_infinite())
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    pub fn select(&self, cols: &[usize]) -> Self {
        Self {
            lower: cols.iter().map(|&j| self.lower[j]).collect(),
            upper: cols.iter().map(|&j| self.upper[j]).collect(),
        }
    }

    pub fn concat(&self, other: &Bounds) -> Self {
        let mut lower = self.lower.clone();
        lower.extend_from_slice(&other.lower);
        let mut upper = self.upper.clone();
        upper.extend_from_slice(&other.upper);
        Self { lower, upper }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passthrough_without_weights() {
        let s = SampleSet::new(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]], None, None).unwrap();
        assert_eq!((s.len(), s.dim()), (3, 2));
        assert!(s.weights().is_none());
        assert_eq!(s.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn weights_are_renormalized() {
        let s = SampleSet::new(vec![vec![0.0], vec![1.0]], None, Some(vec![2.0, 2.0])).unwrap();
        assert_eq!(s.weights().unwrap(), &[0.5, 0.5]);
    }

    #[test]
    fn rejects_nan_and_bad_weights() {
        assert!(matches!(
            SampleSet::new(vec![vec![0.0, f64::NAN]], None, None),
            Err(Error::InvalidSample(_))
        ));
        assert!(matches!(
            SampleSet::new(vec![vec![0.0], vec![1.0]], None, Some(vec![1.0, -1.0])),
            Err(Error::InvalidWeight(_))
        ));
        assert!(matches!(
            SampleSet::new(vec![vec![0.0], vec![1.0]], None, Some(vec![0.0, 0.0])),
            Err(Error::InvalidWeight(_))
        ));
        assert!(SampleSet::new(vec![vec![0.0], vec![1.0, 2.0]], None, None).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = SampleSet::new(vec![vec![0.1, -2.5], vec![1e-300, 3.0]], Some(vec![-1.0, f64::NEG_INFINITY]), Some(vec![1.0, 3.0]))
            .unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,log_post,weight"));
        let back = SampleSet::read_csv(&buf[..]).unwrap();
        assert_eq!(back.positions(), s.positions());
        assert_eq!(back.log_post(), s.log_post());
        assert_eq!(back.weights(), s.weights());
    }

    #[test]
    fn bounds_validation() {
        assert!(Bounds::new(vec![0.0], vec![0.0]).is_err());
        assert!(Bounds::new(vec![f64::NEG_INFINITY], vec![f64::INFINITY]).is_ok());
        let b = Bounds::new(vec![0.0, 0.0], vec![1.0, f64::INFINITY]).unwrap();
        assert!(b.contains(&[0.5, 10.0]));
        assert!(!b.contains(&[1.5, 10.0]));
    }
}
