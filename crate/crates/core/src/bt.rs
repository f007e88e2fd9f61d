//! Bradley-Terry data structures: comparison records, tallies, the
//! likelihood and the sparse design matrix.

use std::io::{Read, Write};
use std::ops::{Deref, Index};

use chrono::{DateTime, SecondsFormat, Utc};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};
use crate::graph::WardGraph;

/// One judgement: `winner` was judged to have the higher rate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub winner: String,
    pub loser: String,
    pub judge: String,
    pub timestamp: DateTime<Utc>,
}

/// Per-ward relative log-rates.
#[derive(Debug, Clone, PartialEq)]
pub struct RateVector(DVector<f64>);

impl RateVector {
    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn mean(&self) -> f64 {
        self.0.mean()
    }

    /// Adds the same constant to every ward.
    pub fn shifted(&self, c: f64) -> Self {
        Self(self.0.add_scalar(c))
    }
}

impl From<DVector<f64>> for RateVector {
    fn from(v: DVector<f64>) -> Self {
        Self(v)
    }
}

impl From<Vec<f64>> for RateVector {
    fn from(v: Vec<f64>) -> Self {
        Self(DVector::from_vec(v))
    }
}

impl Deref for RateVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        self.0.as_slice()
    }
}

impl Index<usize> for RateVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// `P(i beats j) = exp(lambda_i) / (exp(lambda_i) + exp(lambda_j))`.
pub fn win_probability(lambda_i: f64, lambda_j: f64) -> f64 {
    logistic(lambda_i - lambda_j)
}

pub fn logistic(d: f64) -> f64 {
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// `ln logistic(d)` without overflow.
pub fn log_logistic(d: f64) -> f64 {
    if d >= 0.0 {
        -(-d).exp().ln_1p()
    } else {
        d - d.exp().ln_1p()
    }
}

/// Comparison counts `n_ij` and win counts `y_ij` (ward `i` beat ward `j`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tallies {
    n_wards: usize,
    wins: Vec<u32>,
}

impl Tallies {
    pub fn new(n_wards: usize) -> Self {
        Self { n_wards, wins: vec![0; n_wards * n_wards] }
    }

    /// Tallies from `(winner, loser)` index pairs.
    pub fn from_outcomes(n_wards: usize, outcomes: &[(usize, usize)]) -> Result<Self> {
        let mut t = Self::new(n_wards);
        for &(w, l) in outcomes {
            t.record(w, l)?;
        }
        Ok(t)
    }

    pub fn record(&mut self, winner: usize, loser: usize) -> Result<()> {
        for idx in [winner, loser] {
            if idx >= self.n_wards {
                return Err(Error::IndexOutOfRange { index: idx, len: self.n_wards });
            }
        }
        if winner == loser {
            return Err(Error::SelfComparison(winner.to_string()));
        }
        self.wins[winner * self.n_wards + loser] += 1;
        Ok(())
    }

    pub fn n_wards(&self) -> usize {
        self.n_wards
    }

    /// Wins of `i` over `j`.
    pub fn y(&self, i: usize, j: usize) -> u32 {
        self.wins[i * self.n_wards + j]
    }

    /// Comparisons of the pair, symmetric.
    pub fn n(&self, i: usize, j: usize) -> u32 {
        self.y(i, j) + self.y(j, i)
    }

    pub fn total(&self) -> u64 {
        self.wins.iter().map(|&w| w as u64).sum()
    }

    /// Pairs `(i, j, n_ij, y_ij)` with `i < j` and `n_ij > 0`, in canonical order.
    pub fn active_pairs(&self) -> impl Iterator<Item = (usize, usize, u32, u32)> + '_ {
        let n = self.n_wards;
        (0..n)
            .flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
            .filter_map(move |(i, j)| {
                let nij = self.n(i, j);
                (nij > 0).then(|| (i, j, nij, self.y(i, j)))
            })
    }

    /// Same tallies with wards relabelled so new ward `k` is old ward `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let n = self.n_wards;
        let mut out = Self::new(n);
        for a in 0..n {
            for b in 0..n {
                out.wins[a * n + b] = self.y(order[a], order[b]);
            }
        }
        out
    }
}

/// Aggregates records against the ward ids of `graph`.
pub fn tally(records: &[ComparisonRecord], graph: &WardGraph) -> Result<Tallies> {
    let mut t = Tallies::new(graph.len());
    for r in records {
        let w = graph.index_of(&r.winner).ok_or_else(|| Error::UnknownWard(r.winner.clone()))?;
        let l = graph.index_of(&r.loser).ok_or_else(|| Error::UnknownWard(r.loser.clone()))?;
        if w == l {
            return Err(Error::SelfComparison(r.winner.clone()));
        }
        t.record(w, l)?;
    }
    Ok(t)
}

/// Log-likelihood of the tallies, binomial coefficients included.
pub fn log_likelihood(tallies: &Tallies, lambda: &[f64]) -> f64 {
    tallies
        .active_pairs()
        .map(|(i, j, nij, yij)| {
            let d = lambda[i] - lambda[j];
            ln_binomial(nij as u64, yij as u64)
                + yij as f64 * log_logistic(d)
                + (nij - yij) as f64 * log_logistic(-d)
        })
        .sum()
}

/// Sparse Bradley-Terry design matrix: row `r` is `e_i - e_j` for the r-th
/// active pair `(i, j)` in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n_wards: usize,
    rows: Vec<(usize, usize)>,
}

impl DesignMatrix {
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.n_wards
    }

    pub fn rows(&self) -> &[(usize, usize)] {
        &self.rows
    }

    /// `X v`, the per-row differences `v_i - v_j`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|&(i, j)| v[i] - v[j]).collect()
    }

    /// `X^T w`.
    pub fn transpose_apply(&self, w: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_wards);
        for (&(i, j), &x) in self.rows.iter().zip(w) {
            out[i] += x;
            out[j] -= x;
        }
        out
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.rows.len(), self.n_wards);
        for (r, &(i, j)) in self.rows.iter().enumerate() {
            m[(r, i)] = 1.0;
            m[(r, j)] = -1.0;
        }
        m
    }
}

pub fn design_matrix(tallies: &Tallies) -> DesignMatrix {
    DesignMatrix {
        n_wards: tallies.n_wards(),
        rows: tallies.active_pairs().map(|(i, j, _, _)| (i, j)).collect(),
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    winner: String,
    loser: String,
    judge: String,
    timestamp: String,
}

/// Result of reading a comparisons CSV.
#[derive(Debug, Clone, Default)]
pub struct ComparisonImport {
    pub records: Vec<ComparisonRecord>,
    /// Rows without both a winner and a loser (skipped comparisons), by 1-based data row.
    pub dropped: Vec<usize>,
}

/// Reads `winner,loser,judge,timestamp`. Rows missing a winner or loser are
/// reported in `dropped` rather than failing the import.
pub fn read_comparisons<R: Read>(reader: R) -> Result<ComparisonImport> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["winner", "loser", "judge", "timestamp"];
    if headers.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(Error::Parse(format!(
            "comparisons header must be `winner,loser,judge,timestamp`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = ComparisonImport::default();
    for (k, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = row?;
        if row.winner.trim().is_empty() || row.loser.trim().is_empty() {
            out.dropped.push(k + 1);
            continue;
        }
        let timestamp = DateTime::parse_from_rfc3339(row.timestamp.trim())
            .map_err(|e| Error::Parse(format!("row {}: bad timestamp: {e}", k + 1)))?
            .with_timezone(&Utc);
        out.records.push(ComparisonRecord {
            winner: row.winner.trim().to_string(),
            loser: row.loser.trim().to_string(),
            judge: row.judge.trim().to_string(),
            timestamp,
        });
    }
    Ok(out)
}

pub fn write_comparisons<W: Write>(writer: W, records: &[ComparisonRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["winner", "loser", "judge", "timestamp"])?;
    for r in records {
        w.write_record([
            r.winner.as_str(),
            r.loser.as_str(),
            r.judge.as_str(),
            &r.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true),
        ])?;
    }
    w.flush()?;
    Ok(())
}
