//! Distributions over ward pairs from which comparisons are scheduled.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::WardGraph;
use crate::pairs::PairIndex;
use crate::spatial::communicability;

/// Largest number of wards accepted by [`pc_schedule_spectral`] by default.
pub const SPECTRAL_WARD_CAP: usize = 150;

/// Eigenvalues of the difference covariance below this fraction of the
/// largest one are treated as zero.
pub const EIGEN_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Uniform,
    #[serde(alias = "naive")]
    NaiveSpatial,
    #[serde(alias = "pc")]
    PrincipalComponent,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] =
        [Mechanism::Uniform, Mechanism::NaiveSpatial, Mechanism::PrincipalComponent];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mechanism::Uniform => "uniform",
            Mechanism::NaiveSpatial => "naive_spatial",
            Mechanism::PrincipalComponent => "principal_component",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Mechanism::Uniform),
            "naive_spatial" | "naive" => Ok(Mechanism::NaiveSpatial),
            "principal_component" | "pc" => Ok(Mechanism::PrincipalComponent),
            _ => Err(Error::InvalidParameter(format!("unknown mechanism '{s}'"))),
        }
    }
}

/// Probability mass over unordered pairs in canonical pair order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDistribution {
    n_wards: usize,
    probabilities: Vec<f64>,
    mechanism: Mechanism,
}

impl ScheduleDistribution {
    /// Normalises nonnegative `weights` into a distribution.
    pub fn from_weights(n_wards: usize, weights: Vec<f64>, mechanism: Mechanism) -> Result<Self> {
        let index = PairIndex::new(n_wards);
        if n_wards < 2 {
            return Err(Error::InvalidParameter("a schedule needs at least two wards".into()));
        }
        if weights.len() != index.len() {
            return Err(Error::InvalidParameter(format!(
                "{} weights for {} pairs",
                weights.len(),
                index.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Degenerate("all pair weights are zero".into()));
        }
        let probabilities = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { n_wards, probabilities, mechanism })
    }

    pub fn n_wards(&self) -> usize {
        self.n_wards
    }

    pub fn mechanism(&self) -> Mechanism {
        self.mechanism
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn pair_index(&self) -> PairIndex {
        PairIndex::new(self.n_wards)
    }

    pub fn probability(&self, i: usize, j: usize) -> f64 {
        self.probabilities[self.pair_index().index(i, j)]
    }

    /// Removes every pair touching a ward in `excluded` and renormalises.
    ///
    /// Returns `None` when no pair with positive mass is left.
    pub fn masked(&self, excluded: &[usize]) -> Option<Self> {
        if excluded.is_empty() {
            return Some(self.clone());
        }
        let mut blocked = vec![false; self.n_wards];
        for &w in excluded {
            if w < self.n_wards {
                blocked[w] = true;
            }
        }
        let weights = self
            .pair_index()
            .iter()
            .zip(&self.probabilities)
            .map(|((i, j), &p)| if blocked[i] || blocked[j] { 0.0 } else { p })
            .collect();
        Self::from_weights(self.n_wards, weights, self.mechanism).ok()
    }

    /// Sampler for repeated iid draws.
    pub fn sampler(&self) -> PairSampler {
        PairSampler {
            index: self.pair_index(),
            weights: WeightedIndex::new(&self.probabilities)
                .expect("a valid distribution has positive total mass"),
        }
    }

    /// Same distribution with wards relabelled so that new ward `k` is old
    /// ward `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let new_index = PairIndex::new(self.n_wards);
        let probabilities = new_index.iter().map(|(a, b)| self.probability(order[a], order[b])).collect();
        Self { n_wards: self.n_wards, probabilities, mechanism: self.mechanism }
    }
}

/// Draws pairs from a [`ScheduleDistribution`].
#[derive(Debug, Clone)]
pub struct PairSampler {
    index: PairIndex,
    weights: WeightedIndex<f64>,
}

impl PairSampler {
    pub fn draw(&self, rng: &mut crate::Rng) -> (usize, usize) {
        self.index.pair(self.weights.sample(rng))
    }
}

/// `m` iid pairs from `dist`.
pub fn draw_schedule(
    dist: &ScheduleDistribution,
    m: usize,
    rng: &mut crate::Rng,
) -> Vec<(usize, usize)> {
    let sampler = dist.sampler();
    (0..m).map(|_| sampler.draw(rng)).collect()
}

/// Covariance of all pairwise rate differences.
#[derive(Debug, Clone)]
pub struct DifferenceCovariance {
    /// `Cov(lambda_i - lambda_j, lambda_k - lambda_l)` in canonical pair order.
    pub delta: DMatrix<f64>,
    /// Mean of the differences; zero under a zero-mean prior.
    pub nu: DVector<f64>,
}

/// Builds the difference covariance of a zero-mean prior with covariance `sigma`.
pub fn difference_covariance(sigma: &DMatrix<f64>) -> DifferenceCovariance {
    let index = PairIndex::new(sigma.nrows());
    let pairs: Vec<(usize, usize)> = index.iter().collect();
    let m = pairs.len();
    let delta = DMatrix::from_fn(m, m, |a, b| {
        let (i, j) = pairs[a];
        let (k, l) = pairs[b];
        sigma[(i, k)] - sigma[(i, l)] - sigma[(j, k)] + sigma[(j, l)]
    });
    DifferenceCovariance { delta, nu: DVector::zeros(m) }
}

/// Variance of every pairwise difference, `Sigma_ii + Sigma_jj - 2 Sigma_ij`.
pub fn difference_variances(sigma: &DMatrix<f64>) -> Vec<f64> {
    PairIndex::new(sigma.nrows())
        .iter()
        .map(|(i, j)| sigma[(i, i)] + sigma[(j, j)] - 2.0 * sigma[(i, j)])
        .collect()
}

fn check_square(sigma: &DMatrix<f64>) -> Result<()> {
    if sigma.nrows() != sigma.ncols() || sigma.nrows() < 2 {
        return Err(Error::InvalidParameter(format!(
            "covariance must be square with at least two wards, got {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    Ok(())
}

/// Principal-component schedule: each pair's share of the total variance
/// explained by the difference covariance, `Delta_pp / tr(Delta)`.
pub fn pc_schedule(sigma: &DMatrix<f64>) -> Result<ScheduleDistribution> {
    check_square(sigma)?;
    let weights = difference_variances(sigma).into_iter().map(|v| v.max(0.0)).collect();
    ScheduleDistribution::from_weights(sigma.nrows(), weights, Mechanism::PrincipalComponent)
}

/// Principal-component schedule from the eigendecomposition of the
/// difference covariance, `sum_c u_pc^2 psi_c / sum_c psi_c`.
///
/// Memory grows as `N^4`; `cap` bounds the number of wards.
pub fn pc_schedule_spectral(sigma: &DMatrix<f64>, cap: usize) -> Result<ScheduleDistribution> {
    check_square(sigma)?;
    let n = sigma.nrows();
    if n > cap {
        return Err(Error::InvalidParameter(format!(
            "spectral schedule limited to {cap} wards, got {n}"
        )));
    }
    let diff = difference_covariance(sigma);
    let eig = SymmetricEigen::try_new(diff.delta, f64::EPSILON, 0)
        .ok_or_else(|| Error::Factorisation("eigendecomposition did not converge".into()))?;
    let top = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    let psi: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&v| if v < EIGEN_CLAMP * top { 0.0 } else { v })
        .collect();
    let m = psi.len();
    let weights = (0..m)
        .map(|p| {
            psi.iter()
                .enumerate()
                .map(|(c, &s)| eig.eigenvectors[(p, c)].powi(2) * s)
                .sum::<f64>()
        })
        .collect();
    ScheduleDistribution::from_weights(n, weights, Mechanism::PrincipalComponent)
}

/// Every pair equally likely.
pub fn uniform_schedule(n: usize) -> Result<ScheduleDistribution> {
    let m = PairIndex::new(n).len();
    ScheduleDistribution::from_weights(n, vec![1.0; m], Mechanism::Uniform)
}

/// `p ∝ 1 - p* / sum(p*)` with `p*` the off-diagonal communicability.
pub fn naive_spatial_schedule(graph: &WardGraph) -> Result<ScheduleDistribution> {
    let n = graph.len();
    let index = PairIndex::new(n);
    if index.len() == 1 {
        return ScheduleDistribution::from_weights(n, vec![1.0], Mechanism::NaiveSpatial);
    }
    let comm = communicability(graph);
    let raw: Vec<f64> = index.iter().map(|(i, j)| comm[(i, j)]).collect();
    let total: f64 = raw.iter().sum();
    let weights = if total > 0.0 {
        raw.iter().map(|p| (1.0 - p / total).max(0.0)).collect()
    } else {
        vec![1.0; raw.len()]
    };
    ScheduleDistribution::from_weights(n, weights, Mechanism::NaiveSpatial)
}

/// Schedule of the given kind for a prior covariance `sigma` on `graph`.
pub fn build_schedule(
    mechanism: Mechanism,
    graph: &WardGraph,
    sigma: &DMatrix<f64>,
) -> Result<ScheduleDistribution> {
    match mechanism {
        Mechanism::Uniform => uniform_schedule(graph.len()),
        Mechanism::NaiveSpatial => naive_spatial_schedule(graph),
        Mechanism::PrincipalComponent => pc_schedule(sigma),
    }
}

/// `1 / tr(cov)` of posterior draws; `samples` has one row per draw.
pub fn utility(samples: &DMatrix<f64>) -> Result<f64> {
    let draws = samples.nrows();
    if draws < 2 {
        return Err(Error::Degenerate(format!("utility needs at least 2 draws, got {draws}")));
    }
    let trace: f64 = (0..samples.ncols())
        .map(|c| crate::stats::variance(samples.column(c).as_slice()))
        .sum();
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(Error::Degenerate(format!("posterior covariance has trace {trace}")));
    }
    Ok(1.0 / trace)
}

/// Writes `ward_a,ward_b,probability`.
pub fn write_schedule_csv<W: Write>(
    writer: W,
    ward_ids: &[String],
    dist: &ScheduleDistribution,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["ward_a", "ward_b", "probability"])?;
    for ((i, j), p) in dist.pair_index().iter().zip(dist.probabilities()) {
        w.write_record([ward_ids[i].as_str(), ward_ids[j].as_str(), &p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
