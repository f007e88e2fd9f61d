//! Gibbs sampler for the Bayesian spatial Bradley-Terry model.
//!
//! Each sweep draws, in order:
//!
//! 1. `z_ij ~ PG(n_ij, lambda_i - lambda_j)` for every compared pair;
//! 2. `lambda ~ N(mu, S)` with `S = (X^T Z X + Sigma^{-1})^{-1}` and
//!    `mu = S (X^T kappa + Sigma^{-1} prior_mean)`, `kappa_ij = y_ij - n_ij / 2`;
//! 3. `alpha_sq ~ InvGamma(chi + N/2, omega + lambda^T C^{-1} lambda / 2)`;
//! 4. the location of `lambda`: its mean is replaced by a draw of
//!    `N(0, alpha_sq 1^T C 1 / N^2)`, which leaves the likelihood unchanged.
//!
//! A single-site random-walk Metropolis sampler over the same target is
//! provided as an efficiency baseline and correctness cross-check.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};

use crate::bt::{design_matrix, log_logistic, DesignMatrix, Tallies};
use crate::error::{Error, Result};
use crate::pg::{pg_mean, sample_pg, PgParams};
use crate::spatial::{cholesky_with_jitter, spd_inverse};
use crate::stats;

/// Sampler settings. Defaults: 5,000 iterations, 50 burn-in, `chi = omega = 0.1`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitConfig {
    pub iterations: usize,
    pub burn_in: usize,
    /// Inverse-gamma shape of the `alpha_sq` prior.
    pub chi: f64,
    /// Inverse-gamma scale of the `alpha_sq` prior.
    pub omega: f64,
    pub seed: u64,
    /// Starting value of `alpha_sq`, and its fixed value when not updated.
    pub initial_alpha_sq: f64,
    pub update_alpha_sq: bool,
    pub identifiability: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            burn_in: 50,
            chi: 0.1,
            omega: 0.1,
            seed: 1,
            initial_alpha_sq: 1.0,
            update_alpha_sq: true,
            identifiability: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if self.burn_in >= self.iterations {
            return bad(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            ));
        }
        for (name, v) in [
            ("chi", self.chi),
            ("omega", self.omega),
            ("initial_alpha_sq", self.initial_alpha_sq),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        self.iterations - self.burn_in
    }
}

/// Per-pair data in design-matrix row order.
#[derive(Debug, Clone)]
pub struct PairData {
    design: DesignMatrix,
    counts: Vec<u32>,
    kappa: Vec<f64>,
}

impl PairData {
    pub fn new(tallies: &Tallies) -> Self {
        let design = design_matrix(tallies);
        let (counts, kappa) = tallies
            .active_pairs()
            .map(|(_, _, n, y)| (n, y as f64 - n as f64 / 2.0))
            .unzip();
        Self { design, counts, kappa }
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// `y_ij - n_ij / 2` per row.
    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn n_wards(&self) -> usize {
        self.design.ncols()
    }
}

/// Gaussian prior on the rates in precision form.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
}

impl GaussianPrior {
    pub fn from_covariance(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        Ok(Self { mean, precision: spd_inverse(cov)? })
    }
}

/// Current values of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    pub lambda: DVector<f64>,
    /// One latent per design row, aligned with [`PairData::design`].
    pub z: Vec<f64>,
    pub alpha_sq: f64,
}

impl GibbsState {
    /// Starts at `lambda` with each latent at its `PG(n_ij, 0)` mean.
    pub fn new(data: &PairData, lambda: DVector<f64>, alpha_sq: f64) -> Self {
        let z = data
            .counts
            .iter()
            .map(|&n| pg_mean(PgParams::new(n, 0.0).expect("active pairs have n >= 1")))
            .collect();
        Self { lambda, z, alpha_sq }
    }

    pub fn latent(&self, data: &PairData, i: usize, j: usize) -> Option<f64> {
        let key = if i < j { (i, j) } else { (j, i) };
        data.design.rows().binary_search(&key).ok().map(|r| self.z[r])
    }
}

/// Redraws every latent from `PG(n_ij, lambda_i - lambda_j)`.
pub fn update_latents(state: &mut GibbsState, data: &PairData, rng: &mut crate::Rng) -> Result<()> {
    for ((z, &(i, j)), &n) in state.z.iter_mut().zip(data.design.rows()).zip(&data.counts) {
        let c = state.lambda[i] - state.lambda[j];
        *z = sample_pg(PgParams::new(n, c)?, rng)?;
    }
    Ok(())
}

/// Full conditional of the rates given the latents, `N(mean, precision^{-1})`.
#[derive(Debug, Clone)]
pub struct RatesConditional {
    pub precision: DMatrix<f64>,
    /// `X^T kappa + Sigma^{-1} prior_mean`
    pub rhs: DVector<f64>,
    pub mean: DVector<f64>,
    lower: DMatrix<f64>,
}

pub fn rates_conditional(
    data: &PairData,
    z: &[f64],
    prior: &GaussianPrior,
) -> Result<RatesConditional> {
    let mut precision = prior.precision.clone();
    for (&(i, j), &w) in data.design.rows().iter().zip(z) {
        precision[(i, i)] += w;
        precision[(j, j)] += w;
        precision[(i, j)] -= w;
        precision[(j, i)] -= w;
    }
    let rhs = data.design.transpose_apply(&data.kappa) + &prior.precision * &prior.mean;
    let chol = cholesky_with_jitter(&precision)?;
    let mean = chol.solve(&rhs);
    Ok(RatesConditional { precision, rhs, mean, lower: chol.unpack() })
}

impl RatesConditional {
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.lower.nrows();
        let linv = self
            .lower
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("Cholesky factor has a positive diagonal");
        linv.transpose() * linv
    }

    /// `mean + L^{-T} eps` has covariance `precision^{-1}`.
    pub fn sample(&self, rng: &mut crate::Rng) -> DVector<f64> {
        let n = self.mean.len();
        let eps = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let offset = self
            .lower
            .tr_solve_lower_triangular(&eps)
            .expect("Cholesky factor has a positive diagonal");
        &self.mean + offset
    }
}

/// Redraws the rates from their Gaussian full conditional.
pub fn update_rates(
    state: &mut GibbsState,
    data: &PairData,
    prior: &GaussianPrior,
    rng: &mut crate::Rng,
) -> Result<()> {
    state.lambda = rates_conditional(data, &state.z, prior)?.sample(rng);
    Ok(())
}

/// Inverse-gamma draw with the given shape and scale.
pub(crate) fn sample_inverse_gamma(shape: f64, scale: f64, rng: &mut crate::Rng) -> Result<f64> {
    let g = Gamma::new(shape, 1.0)
        .map_err(|e| Error::InvalidParameter(format!("gamma({shape}): {e}")))?
        .sample(rng);
    Ok(scale / g)
}

/// `alpha_sq ~ InvGamma(chi + N/2, omega + lambda^T C^{-1} lambda / 2)`.
pub fn update_alpha_sq(
    state: &mut GibbsState,
    correlation_precision: &DMatrix<f64>,
    chi: f64,
    omega: f64,
    rng: &mut crate::Rng,
) -> Result<()> {
    let (shape, scale) = alpha_sq_conditional(&state.lambda, correlation_precision, chi, omega);
    state.alpha_sq = sample_inverse_gamma(shape, scale, rng)?;
    Ok(())
}

/// Shape and scale of the inverse-gamma full conditional of `alpha_sq`.
pub fn alpha_sq_conditional(
    lambda: &DVector<f64>,
    correlation_precision: &DMatrix<f64>,
    chi: f64,
    omega: f64,
) -> (f64, f64) {
    let n = lambda.len() as f64;
    let quad = lambda.dot(&(correlation_precision * lambda));
    (chi + n / 2.0, omega + 0.5 * quad)
}

/// Replaces the mean of the rates with a draw of `N(0, alpha_sq 1^T C 1 / N^2)`.
///
/// `correlation_total` is `1^T C 1`. Returns the drawn location.
pub fn apply_identifiability(
    state: &mut GibbsState,
    correlation_total: f64,
    rng: &mut crate::Rng,
) -> f64 {
    let n = state.lambda.len() as f64;
    let sd = (state.alpha_sq * correlation_total).sqrt() / n;
    let eps: f64 = StandardNormal.sample(rng);
    let location = sd * eps;
    let shift = location - state.lambda.mean();
    state.lambda.add_scalar_mut(shift);
    location
}

/// Posterior summary of one scalar.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScalarSummary {
    pub mean: f64,
    pub median: f64,
    pub q05: f64,
    pub q95: f64,
    pub variance: f64,
}

impl ScalarSummary {
    pub fn from_draws(draws: &[f64]) -> Self {
        let mut sorted = draws.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        Self {
            mean: stats::mean(draws),
            median: stats::quantile_sorted(&sorted, 0.5),
            q05: stats::quantile_sorted(&sorted, 0.05),
            q95: stats::quantile_sorted(&sorted, 0.95),
            variance: stats::variance(draws),
        }
    }
}

/// Median and 90% interval.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IntervalSummary {
    pub median: f64,
    pub q05: f64,
    pub q95: f64,
}

impl IntervalSummary {
    fn map_monotone(s: &ScalarSummary, f: impl Fn(f64) -> f64) -> Self {
        Self { median: f(s.median), q05: f(s.q05), q95: f(s.q95) }
    }
}

/// Per-ward and hyperparameter summaries of the retained draws.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PosteriorSummary {
    pub wards: Vec<ScalarSummary>,
    pub alpha_sq: Option<ScalarSummary>,
    /// Quantiles of `alpha = sqrt(alpha_sq)`.
    pub alpha: Option<IntervalSummary>,
}

impl PosteriorSummary {
    /// `samples` has one row per retained iteration and one column per ward.
    pub fn from_samples(samples: &DMatrix<f64>, alpha_sq: Option<&[f64]>) -> Self {
        let wards = (0..samples.ncols())
            .map(|c| ScalarSummary::from_draws(samples.column(c).as_slice()))
            .collect();
        let alpha_sq = alpha_sq.map(ScalarSummary::from_draws);
        let alpha = alpha_sq.map(|s| IntervalSummary::map_monotone(&s, f64::sqrt));
        Self { wards, alpha_sq, alpha }
    }

    pub fn medians(&self) -> Vec<f64> {
        self.wards.iter().map(|w| w.median).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.wards.iter().map(|w| w.mean).collect()
    }
}

/// Output of a sampler run.
#[derive(Debug, Clone)]
pub struct BsbtFit {
    pub summary: PosteriorSummary,
    /// Retained draws, one row per iteration.
    pub lambda_samples: DMatrix<f64>,
    pub alpha_sq_samples: Vec<f64>,
    /// Wall-clock seconds spent in the sweep loop.
    pub sampling_seconds: f64,
    pub iterations: usize,
    pub burn_in: usize,
    /// Metropolis acceptance rate; `None` for the Gibbs sampler.
    pub acceptance_rate: Option<f64>,
}

impl BsbtFit {
    pub fn lambda_chain(&self, ward: usize) -> Vec<f64> {
        self.lambda_samples.column(ward).iter().copied().collect()
    }
}

/// Prior pieces shared by both samplers.
struct PriorFactors {
    correlation_precision: DMatrix<f64>,
    correlation_total: f64,
}

impl PriorFactors {
    fn new(correlation: &DMatrix<f64>) -> Result<Self> {
        Ok(Self {
            correlation_precision: spd_inverse(correlation)?,
            correlation_total: correlation.sum(),
        })
    }
}

fn check_inputs(tallies: &Tallies, correlation: &DMatrix<f64>, config: &FitConfig) -> Result<()> {
    config.validate()?;
    let n = tallies.n_wards();
    if correlation.nrows() != n || correlation.ncols() != n {
        return Err(Error::InvalidParameter(format!(
            "correlation is {}x{} but there are {n} wards",
            correlation.nrows(),
            correlation.ncols()
        )));
    }
    if tallies.active_pairs().next().is_none() {
        return Err(Error::InvalidParameter("no comparisons to fit".into()));
    }
    Ok(())
}

/// Collects retained draws.
struct Trace {
    burn_in: usize,
    lambda: Vec<f64>,
    alpha_sq: Vec<f64>,
    n: usize,
}

impl Trace {
    fn new(config: &FitConfig, n: usize) -> Self {
        Self {
            burn_in: config.burn_in,
            lambda: Vec::with_capacity(config.retained() * n),
            alpha_sq: Vec::with_capacity(config.retained()),
            n,
        }
    }

    fn push(&mut self, iteration: usize, lambda: &DVector<f64>, alpha_sq: f64) {
        if iteration >= self.burn_in {
            self.lambda.extend(lambda.iter());
            self.alpha_sq.push(alpha_sq);
        }
    }

    fn finish(
        self,
        config: &FitConfig,
        seconds: f64,
        acceptance_rate: Option<f64>,
    ) -> BsbtFit {
        let rows = self.alpha_sq.len();
        let lambda_samples = DMatrix::from_row_slice(rows, self.n, &self.lambda);
        let alpha = config.update_alpha_sq.then_some(self.alpha_sq.as_slice());
        BsbtFit {
            summary: PosteriorSummary::from_samples(&lambda_samples, alpha),
            lambda_samples,
            alpha_sq_samples: self.alpha_sq,
            sampling_seconds: seconds,
            iterations: config.iterations,
            burn_in: config.burn_in,
            acceptance_rate,
        }
    }
}

/// Runs the Polya-Gamma Gibbs sampler.
///
/// `correlation` is the fixed factor `C` of the prior covariance
/// `Sigma = alpha_sq * C`.
pub fn fit(tallies: &Tallies, correlation: &DMatrix<f64>, config: &FitConfig) -> Result<BsbtFit> {
    check_inputs(tallies, correlation, config)?;
    let n = tallies.n_wards();
    let data = PairData::new(tallies);
    let factors = PriorFactors::new(correlation)?;
    let mut rng = crate::rng_for(config.seed, 0);
    let mut state = GibbsState::new(&data, DVector::zeros(n), config.initial_alpha_sq);
    let mut prior = GaussianPrior { mean: DVector::zeros(n), precision: DMatrix::zeros(n, n) };
    let mut trace = Trace::new(config, n);

    let start = Instant::now();
    for it in 0..config.iterations {
        update_latents(&mut state, &data, &mut rng)?;
        prior.precision.copy_from(&factors.correlation_precision);
        prior.precision.scale_mut(1.0 / state.alpha_sq);
        update_rates(&mut state, &data, &prior, &mut rng)?;
        if config.update_alpha_sq {
            update_alpha_sq(
                &mut state,
                &factors.correlation_precision,
                config.chi,
                config.omega,
                &mut rng,
            )?;
        }
        if config.identifiability {
            apply_identifiability(&mut state, factors.correlation_total, &mut rng);
        }
        trace.push(it, &state.lambda, state.alpha_sq);
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(trace.finish(config, seconds, None))
}

/// Settings of the Metropolis baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct MhConfig {
    pub fit: FitConfig,
    /// Standard deviation of the Gaussian random-walk proposal.
    pub step: f64,
}

impl Default for MhConfig {
    fn default() -> Self {
        Self { fit: FitConfig::default(), step: 0.5 }
    }
}

/// Single-site Gaussian random-walk Metropolis over the same posterior.
///
/// One iteration proposes a move for every ward in turn, then applies the
/// same `alpha_sq` and location updates as the Gibbs sampler.
pub fn mh_baseline_fit(
    tallies: &Tallies,
    correlation: &DMatrix<f64>,
    config: &MhConfig,
) -> Result<BsbtFit> {
    let fc = &config.fit;
    check_inputs(tallies, correlation, fc)?;
    if !(config.step > 0.0 && config.step.is_finite()) {
        return Err(Error::InvalidParameter("step must be positive".into()));
    }
    let n = tallies.n_wards();
    let factors = PriorFactors::new(correlation)?;
    let q = &factors.correlation_precision;
    let q_ones: DVector<f64> = q.column_sum();

    // opponents of each ward: (other, wins of this ward, losses of this ward)
    let mut opponents: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); n];
    for (i, j, _, _) in tallies.active_pairs() {
        opponents[i].push((j, tallies.y(i, j) as f64, tallies.y(j, i) as f64));
        opponents[j].push((i, tallies.y(j, i) as f64, tallies.y(i, j) as f64));
    }
    let local_loglik = |lambda: &DVector<f64>, i: usize, value: f64| -> f64 {
        opponents[i]
            .iter()
            .map(|&(j, w, l)| {
                let d = value - lambda[j];
                w * log_logistic(d) + l * log_logistic(-d)
            })
            .sum()
    };

    let mut rng = crate::rng_for(fc.seed, 0);
    let step = Normal::new(0.0, config.step).expect("validated step");
    let mut state = GibbsState { lambda: DVector::zeros(n), z: Vec::new(), alpha_sq: fc.initial_alpha_sq };
    // q_lambda = C^{-1} lambda, kept in sync with every accepted move
    let mut q_lambda = DVector::zeros(n);
    let mut trace = Trace::new(fc, n);
    let (mut accepted, mut proposed) = (0usize, 0usize);

    let start = Instant::now();
    for it in 0..fc.iterations {
        let inv_alpha_sq = 1.0 / state.alpha_sq;
        for i in 0..n {
            let delta: f64 = step.sample(&mut rng);
            let current = state.lambda[i];
            let log_prior_ratio =
                -0.5 * inv_alpha_sq * (2.0 * delta * q_lambda[i] + delta * delta * q[(i, i)]);
            let log_ratio = log_prior_ratio + local_loglik(&state.lambda, i, current + delta)
                - local_loglik(&state.lambda, i, current);
            proposed += 1;
            if log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio {
                accepted += 1;
                state.lambda[i] = current + delta;
                q_lambda.axpy(delta, &q.column(i), 1.0);
            }
        }
        if fc.update_alpha_sq {
            let quad = state.lambda.dot(&q_lambda);
            state.alpha_sq =
                sample_inverse_gamma(fc.chi + n as f64 / 2.0, fc.omega + 0.5 * quad, &mut rng)?;
        }
        if fc.identifiability {
            let before = state.lambda.mean();
            let location = apply_identifiability(&mut state, factors.correlation_total, &mut rng);
            q_lambda.axpy(location - before, &q_ones, 1.0);
        }
        trace.push(it, &state.lambda, state.alpha_sq);
    }
    let seconds = start.elapsed().as_secs_f64();
    let rate = accepted as f64 / proposed.max(1) as f64;
    Ok(trace.finish(fc, seconds, Some(rate)))
}

/// Writes `ward,median,q05,q95,variance`.
pub fn write_results_csv<W: Write>(
    writer: W,
    ward_ids: &[String],
    summary: &PosteriorSummary,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["ward", "median", "q05", "q95", "variance"])?;
    for (id, s) in ward_ids.iter().zip(&summary.wards) {
        w.write_record([
            id.clone(),
            s.median.to_string(),
            s.q05.to_string(),
            s.q95.to_string(),
            s.variance.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a results file back as `(ward, summary)` rows; mean is not stored.
pub fn read_results_csv<R: std::io::Read>(reader: R) -> Result<Vec<(String, ScalarSummary)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let num = |k: usize| -> Result<f64> {
            row.get(k)
                .ok_or_else(|| Error::Parse("short results row".into()))?
                .parse()
                .map_err(|e| Error::Parse(format!("results row: {e}")))
        };
        out.push((
            row.get(0).unwrap_or_default().to_string(),
            ScalarSummary {
                mean: f64::NAN,
                median: num(1)?,
                q05: num(2)?,
                q95: num(3)?,
                variance: num(4)?,
            },
        ));
    }
    Ok(out)
}

/// Chain dump: columns `lambda_1..lambda_N,alpha_sq`, one row per retained iteration.
pub fn write_chain_csv<W: Write>(writer: W, fit: &BsbtFit) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let n = fit.lambda_samples.ncols();
    let mut header: Vec<String> = (1..=n).map(|i| format!("lambda_{i}")).collect();
    header.push("alpha_sq".into());
    w.write_record(&header)?;
    for (r, a) in fit.alpha_sq_samples.iter().enumerate() {
        let mut row: Vec<String> =
            fit.lambda_samples.row(r).iter().map(|x| x.to_string()).collect();
        row.push(a.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bt::log_likelihood;
    use crate::rng_for;

    fn toy_tallies() -> Tallies {
        let mut outcomes = Vec::new();
        for _ in 0..7 {
            outcomes.push((0, 1));
        }
        for _ in 0..3 {
            outcomes.push((1, 0));
        }
        for _ in 0..6 {
            outcomes.push((1, 2));
        }
        outcomes.push((2, 1));
        Tallies::from_outcomes(3, &outcomes).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        let c = FitConfig { burn_in: 10, iterations: 10, ..Default::default() };
        assert!(c.validate().is_err());
        let c = FitConfig { chi: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        let t = Tallies::new(3);
        assert!(fit(&t, &DMatrix::identity(3, 3), &FitConfig::default()).is_err());
    }

    #[test]
    fn latents_only_for_active_pairs() {
        let t = Tallies::from_outcomes(4, &[(0, 2), (3, 1)]).unwrap();
        let data = PairData::new(&t);
        let mut state = GibbsState::new(&data, DVector::zeros(4), 1.0);
        assert_eq!(state.z.len(), 2);
        assert!(state.latent(&data, 0, 1).is_none());
        assert!(state.latent(&data, 2, 0).is_some());
        let mut rng = rng_for(1, 0);
        update_latents(&mut state, &data, &mut rng).unwrap();
        assert!(state.z.iter().all(|&z| z > 0.0));
        let empty = PairData::new(&Tallies::new(3));
        let mut s = GibbsState::new(&empty, DVector::zeros(3), 1.0);
        update_latents(&mut s, &empty, &mut rng).unwrap();
        assert!(s.z.is_empty());
    }

    #[test]
    fn latent_mean_at_equal_rates() {
        let t = Tallies::from_outcomes(2, &[(0, 1)]).unwrap();
        let data = PairData::new(&t);
        let mut state = GibbsState::new(&data, DVector::from_vec(vec![0.3, 0.3]), 1.0);
        let mut rng = rng_for(2, 0);
        let n = 50_000;
        let mut sum = 0.0;
        for _ in 0..n {
            update_latents(&mut state, &data, &mut rng).unwrap();
            sum += state.z[0];
        }
        let se = (1.0 / 24.0 / n as f64).sqrt();
        assert!((sum / n as f64 - 0.25).abs() < 4.0 * se);
    }

    #[test]
    fn two_ward_conditional_matches_hand_algebra() {
        // n_12 = 2, y_12 = 1 so kappa = 0; z = 0.7; prior N(0, I)
        let t = Tallies::from_outcomes(2, &[(0, 1), (1, 0)]).unwrap();
        let data = PairData::new(&t);
        let prior = GaussianPrior { mean: DVector::zeros(2), precision: DMatrix::identity(2, 2) };
        let cond = rates_conditional(&data, &[0.7], &prior).unwrap();
        // precision [[1.7, -0.7], [-0.7, 1.7]], det = 2.4
        let expected_cov = DMatrix::from_row_slice(2, 2, &[1.7 / 2.4, 0.7 / 2.4, 0.7 / 2.4, 1.7 / 2.4]);
        assert!((cond.covariance() - &expected_cov).abs().max() < 1e-12);
        assert!(cond.mean.abs().max() < 1e-15);

        // y_12 = 2: kappa = 1, X^T kappa = (1, -1); prior mean (0.5, 0)
        let t = Tallies::from_outcomes(2, &[(0, 1), (0, 1)]).unwrap();
        let data = PairData::new(&t);
        let prior = GaussianPrior {
            mean: DVector::from_vec(vec![0.5, 0.0]),
            precision: DMatrix::identity(2, 2),
        };
        let cond = rates_conditional(&data, &[0.7], &prior).unwrap();
        let rhs = DVector::from_vec(vec![1.5, -1.0]);
        let expected_mean = &expected_cov * &rhs;
        assert!((&cond.mean - expected_mean).abs().max() < 1e-12);
    }

    #[test]
    fn conditional_mean_solves_linear_system() {
        let g = crate::graph::WardGraph::study_region();
        let cov = crate::spatial::prior_covariance(&g, 4.0).unwrap();
        let mut rng = rng_for(3, 0);
        let truth = crate::spatial::sample_prior(&cov, &mut rng).unwrap();
        let pairs: Vec<(usize, usize)> = (0..300)
            .map(|_| {
                let i = rng.random_range(0..g.len());
                let j = (i + 1 + rng.random_range(0..g.len() - 1)) % g.len();
                if rng.random::<f64>() < crate::bt::win_probability(truth[i], truth[j]) {
                    (i, j)
                } else {
                    (j, i)
                }
            })
            .collect();
        let t = Tallies::from_outcomes(g.len(), &pairs).unwrap();
        let data = PairData::new(&t);
        let z: Vec<f64> = (0..data.design().nrows()).map(|_| rng.random::<f64>() + 0.05).collect();
        let prior_mean = DVector::from_fn(g.len(), |i, _| (i as f64 * 0.1).sin());
        let prior = GaussianPrior::from_covariance(prior_mean, cov.sigma()).unwrap();
        let cond = rates_conditional(&data, &z, &prior).unwrap();
        let residual = &cond.precision * &cond.mean - &cond.rhs;
        assert!(residual.abs().max() < 1e-8, "residual {}", residual.abs().max());
    }

    #[test]
    fn no_data_update_recovers_prior() {
        let data = PairData::new(&Tallies::new(2));
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let prior = GaussianPrior::from_covariance(DVector::zeros(2), &cov).unwrap();
        let mut state = GibbsState::new(&data, DVector::zeros(2), 1.0);
        let mut rng = rng_for(4, 0);
        let n = 10_000;
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            update_rates(&mut state, &data, &prior, &mut rng).unwrap();
            draws.push(state.lambda.clone());
        }
        for (k, var) in [(0, 2.0), (1, 1.0)] {
            let xs: Vec<f64> = draws.iter().map(|d| d[k]).collect();
            assert!(stats::mean(&xs).abs() < 4.0 * (var / n as f64).sqrt());
            let v = stats::variance(&xs);
            assert!((v - var).abs() < 4.0 * var * (2.0 / n as f64).sqrt(), "var {v}");
        }
        let cross: f64 = draws.iter().map(|d| d[0] * d[1]).sum::<f64>() / n as f64;
        assert!((cross - 0.6).abs() < 0.06);
    }

    #[test]
    fn alpha_sq_update_shape_and_scale() {
        // lambda = 0: InvGamma(chi + N/2, omega); mean = omega / (shape - 1)
        let mut rng = rng_for(5, 0);
        let q = DMatrix::identity(2, 2);
        let mut state = GibbsState { lambda: DVector::zeros(2), z: vec![], alpha_sq: 1.0 };
        let n = 200_000;
        let (chi, omega) = (3.0, 2.0);
        let mut sum = 0.0;
        for _ in 0..n {
            update_alpha_sq(&mut state, &q, chi, omega, &mut rng).unwrap();
            sum += state.alpha_sq;
        }
        let shape = chi + 1.0;
        let mean = omega / (shape - 1.0);
        let sd = mean / (shape - 2.0).sqrt();
        assert!((sum / n as f64 - mean).abs() < 4.0 * sd / (n as f64).sqrt());

        // lambda = (1, 1), C = I: scale = omega + 1
        state.lambda = DVector::from_vec(vec![1.0, 1.0]);
        let mut sum = 0.0;
        for _ in 0..n {
            update_alpha_sq(&mut state, &q, chi, omega, &mut rng).unwrap();
            sum += state.alpha_sq;
        }
        let mean = (omega + 1.0) / (shape - 1.0);
        let sd = mean / (shape - 2.0).sqrt();
        assert!((sum / n as f64 - mean).abs() < 4.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn identifiability_translation() {
        let t = toy_tallies();
        let mut rng = rng_for(6, 0);
        let mut state = GibbsState {
            lambda: DVector::from_vec(vec![1.5, -0.2, 3.0]),
            z: vec![],
            alpha_sq: 2.0,
        };
        let before = log_likelihood(&t, state.lambda.as_slice());
        let location = apply_identifiability(&mut state, 5.0, &mut rng);
        assert!((state.lambda.mean() - location).abs() < 1e-14);
        assert!((log_likelihood(&t, state.lambda.as_slice()) - before).abs() < 1e-12);

        let n = 50_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| apply_identifiability(&mut state, 5.0, &mut rng))
            .collect();
        let expected = 2.0 * 5.0 / 9.0;
        let v = stats::variance(&draws);
        assert!((v - expected).abs() < 4.0 * expected * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn same_seed_same_fit() {
        let t = toy_tallies();
        let c = crate::spatial::prior_covariance(&crate::graph::WardGraph::path(3).unwrap(), 1.0)
            .unwrap();
        let config = FitConfig { iterations: 300, burn_in: 30, seed: 9, ..Default::default() };
        let a = fit(&t, c.correlation(), &config).unwrap();
        let b = fit(&t, c.correlation(), &config).unwrap();
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.lambda_samples.nrows(), 270);
        for w in &a.summary.wards {
            assert!(w.q05 <= w.median && w.median <= w.q95);
        }
        let mh = mh_baseline_fit(&t, c.correlation(), &MhConfig { fit: config, step: 0.5 }).unwrap();
        assert!(mh.acceptance_rate.unwrap() > 0.0);
    }

    #[test]
    fn results_csv_round_trip() {
        let t = toy_tallies();
        let config = FitConfig { iterations: 100, burn_in: 10, ..Default::default() };
        let f = fit(&t, &DMatrix::identity(3, 3), &config).unwrap();
        let ids: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &ids, &f.summary).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("ward,median,q05,q95,variance\n"));
        let back = read_results_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[1].1.median, f.summary.wards[1].median);
        let mut chain = Vec::new();
        write_chain_csv(&mut chain, &f).unwrap();
        let text = String::from_utf8(chain).unwrap();
        assert!(text.starts_with("lambda_1,lambda_2,lambda_3,alpha_sq\n"));
        assert_eq!(text.lines().count(), 91);
    }
}
