//! Spatial prior: communicability of the ward graph, the normalised prior
//! covariance `alpha_sq * D^{-1/2} exp(A) D^{-1/2}` and Gaussian sampling.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::bt::RateVector;
use crate::error::{Error, Result};
use crate::graph::WardGraph;

/// Diagonal jitter added once when a Cholesky factorisation fails.
pub const CHOLESKY_JITTER: f64 = 1e-10;

/// Matrix exponential of the adjacency matrix.
///
/// Computed through the symmetric eigendecomposition `A = V diag(w) V^T`, so
/// the result is symmetric by construction.
pub fn communicability(graph: &WardGraph) -> DMatrix<f64> {
    symmetric_exp(graph.adjacency())
}

pub(crate) fn symmetric_exp(a: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a);
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (c, w) in eig.eigenvalues.iter().enumerate() {
        scaled.column_mut(c).scale_mut(w.exp());
    }
    let m = scaled * v.transpose();
    (&m + m.transpose()) * 0.5
}

/// Prior covariance `sigma = alpha_sq * correlation`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCovariance {
    correlation: DMatrix<f64>,
    alpha_sq: f64,
    sigma: DMatrix<f64>,
}

impl SpatialCovariance {
    /// Wraps an arbitrary correlation matrix (unit diagonal, symmetric).
    pub fn from_correlation(correlation: DMatrix<f64>, alpha_sq: f64) -> Result<Self> {
        check_alpha_sq(alpha_sq)?;
        let n = correlation.nrows();
        if correlation.ncols() != n || n == 0 {
            return Err(Error::InvalidParameter("correlation must be square".into()));
        }
        for i in 0..n {
            if (correlation[(i, i)] - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidParameter(format!(
                    "correlation diagonal entry {i} is {}",
                    correlation[(i, i)]
                )));
            }
            for j in 0..i {
                let (a, b) = (correlation[(i, j)], correlation[(j, i)]);
                if !a.is_finite() || (a - b).abs() > 1e-12 {
                    return Err(Error::InvalidParameter("correlation is not symmetric".into()));
                }
            }
        }
        let sigma = &correlation * alpha_sq;
        Ok(Self { correlation, alpha_sq, sigma })
    }

    /// Independent wards: `sigma = alpha_sq * I`.
    pub fn independent(n: usize, alpha_sq: f64) -> Result<Self> {
        Self::from_correlation(DMatrix::identity(n, n), alpha_sq)
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn correlation(&self) -> &DMatrix<f64> {
        &self.correlation
    }

    pub fn alpha_sq(&self) -> f64 {
        self.alpha_sq
    }

    pub fn len(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.nrows() == 0
    }

    pub fn with_alpha_sq(&self, alpha_sq: f64) -> Result<Self> {
        check_alpha_sq(alpha_sq)?;
        Ok(Self {
            correlation: self.correlation.clone(),
            alpha_sq,
            sigma: &self.correlation * alpha_sq,
        })
    }

    /// `1^T C 1`, the summed correlation (variance of the ward total per unit alpha_sq).
    pub fn correlation_total(&self) -> f64 {
        self.correlation.sum()
    }
}

fn check_alpha_sq(alpha_sq: f64) -> Result<()> {
    if alpha_sq > 0.0 && alpha_sq.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "alpha_sq must be positive and finite, got {alpha_sq}"
        )))
    }
}

/// Normalises a positive-diagonal matrix to unit diagonal: `D^{-1/2} M D^{-1/2}`.
pub fn normalise_to_correlation(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let scale: Vec<f64> = (0..n).map(|i| m[(i, i)].sqrt().recip()).collect();
    let mut c = DMatrix::from_fn(n, n, |i, j| m[(i, j)] * (scale[i] * scale[j]));
    for i in 0..n {
        c[(i, i)] = 1.0;
    }
    if c.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(
            "normalisation produced non-finite entries".into(),
        ));
    }
    Ok(c)
}

/// Spatial prior covariance of a ward graph.
pub fn prior_covariance(graph: &WardGraph, alpha_sq: f64) -> Result<SpatialCovariance> {
    check_alpha_sq(alpha_sq)?;
    let correlation = normalise_to_correlation(&communicability(graph))?;
    SpatialCovariance::from_correlation(correlation, alpha_sq)
}

/// Pairwise affinity `f(i, j)` used by the clustering prior.
#[derive(Debug, Clone)]
pub struct Affinity {
    weights: DMatrix<f64>,
}

impl Affinity {
    /// `f(i, j) = exp(A)_{ij}`.
    pub fn communicability(graph: &WardGraph) -> Self {
        Self { weights: communicability(graph) }
    }

    /// `f(i, j) = exp(-d(i, j) / length_scale)` on hop distance; 0 when unreachable.
    pub fn hop_decay(graph: &WardGraph, length_scale: f64) -> Result<Self> {
        if !(length_scale > 0.0) {
            return Err(Error::InvalidParameter("length_scale must be positive".into()));
        }
        let n = graph.len();
        let mut weights = DMatrix::zeros(n, n);
        for i in 0..n {
            for (j, d) in graph.hop_distances(i).into_iter().enumerate() {
                if let Some(d) = d {
                    weights[(i, j)] = (-(d as f64) / length_scale).exp();
                }
            }
        }
        Ok(Self { weights })
    }

    /// Arbitrary symmetric nonnegative weights (diagonal ignored).
    pub fn from_matrix(weights: DMatrix<f64>) -> Result<Self> {
        if weights.nrows() != weights.ncols() || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParameter(
                "affinity must be square and nonnegative".into(),
            ));
        }
        Ok(Self { weights })
    }

    pub fn len(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }
}

/// `exp(A)_{ij}` for a single pair.
pub fn communicability_affinity(graph: &WardGraph, i: usize, j: usize) -> Result<f64> {
    let n = graph.len();
    for idx in [i, j] {
        if idx >= n {
            return Err(Error::IndexOutOfRange { index: idx, len: n });
        }
    }
    if i == j {
        return Err(Error::InvalidParameter("affinity needs two distinct wards".into()));
    }
    Ok(communicability(graph)[(i, j)])
}

/// Cholesky factorisation, retried once with `CHOLESKY_JITTER * I` added.
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Ok(ch);
    }
    let n = m.nrows();
    let jittered = m + DMatrix::<f64>::identity(n, n) * CHOLESKY_JITTER;
    Cholesky::new(jittered).ok_or_else(|| {
        Error::Factorisation(format!("{n}x{n} matrix is not positive definite after jitter"))
    })
}

/// Inverse of a symmetric positive-definite matrix, symmetrised.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = cholesky_with_jitter(m)?.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Zero-mean Gaussian sampler with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    lower: DMatrix<f64>,
}

impl MvnSampler {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        Ok(Self { lower: cholesky_with_jitter(cov)?.unpack() })
    }

    pub fn sample(&self, rng: &mut crate::Rng) -> DVector<f64> {
        let n = self.lower.nrows();
        let eps = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        &self.lower * eps
    }
}

/// One draw `lambda ~ MVN(0, sigma)`.
pub fn sample_prior(cov: &SpatialCovariance, rng: &mut crate::Rng) -> Result<RateVector> {
    Ok(RateVector::from(MvnSampler::new(cov.sigma())?.sample(rng)))
}
