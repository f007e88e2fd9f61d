//! Spatial clustering Bradley-Terry model with a distance-dependent CRP prior.
//!
//! Every ward `i` links to one ward `theta[i]` (possibly itself) with prior
//! weight `beta` for a self link and `f(i, j)` otherwise. Clusters are the
//! connected components of the link graph. Within cluster `k` the rates are
//! `lambda_i ~ N(m_k, sigma_k^2)` with a normal-inverse-gamma base measure
//! `m_k | sigma_k^2 ~ N(mu0, sigma_k^2)`, `1 / sigma_k^2 ~ Gamma(alpha0, beta0)`.

use std::collections::HashMap;
use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::bsbt::{
    update_latents, update_rates, GaussianPrior, GibbsState, PairData, PosteriorSummary,
};
use crate::bt::Tallies;
use crate::error::{Error, Result};
use crate::graph::WardGraph;
use crate::spatial::Affinity;

/// Link targets, `theta[i]` is the ward that `i` points to.
pub type AssignmentVector = Vec<usize>;

/// Normal-inverse-gamma base measure with unit mean-precision scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NigBase {
    pub mu0: f64,
    pub alpha0: f64,
    pub beta0: f64,
}

impl Default for NigBase {
    fn default() -> Self {
        Self { mu0: 0.0, alpha0: 1.0, beta0: 1.0 }
    }
}

impl NigBase {
    pub fn validate(&self) -> Result<()> {
        if !self.mu0.is_finite() || !(self.alpha0 > 0.0) || !(self.beta0 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "base measure needs finite mu0 and positive alpha0, beta0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Cluster label of every ward, numbered by smallest member.
pub fn cluster_labels(theta: &[usize]) -> Vec<usize> {
    let n = theta.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for (i, &t) in theta.iter().enumerate() {
        let (a, b) = (find(&mut parent, i), find(&mut parent, t));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut label_of_root = vec![usize::MAX; n];
    let mut next = 0;
    let mut labels = vec![0; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if label_of_root[r] == usize::MAX {
            label_of_root[r] = next;
            next += 1;
        }
        labels[i] = label_of_root[r];
    }
    labels
}

/// Connected components of the link graph, ordered by smallest member.
pub fn clusters(theta: &[usize]) -> Vec<Vec<usize>> {
    let labels = cluster_labels(theta);
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        out[l].push(i);
    }
    out
}

fn check_theta(theta: &[usize]) -> Result<()> {
    let n = theta.len();
    match theta.iter().find(|&&t| t >= n) {
        Some(&t) => Err(Error::IndexOutOfRange { index: t, len: n }),
        None => Ok(()),
    }
}

/// Count, mean and centred sum of squares of a set of rates.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(a: Self, b: Self) -> Self {
        let n = a.n + b.n;
        if n == 0.0 {
            return Self::default();
        }
        let d = b.mean - a.mean;
        Self { n, mean: a.mean + d * b.n / n, m2: a.m2 + b.m2 + d * d * a.n * b.n / n }
    }

    fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut m = Self::default();
        values.into_iter().for_each(|x| m.push(x));
        m
    }
}

impl NigBase {
    /// `beta0 + SS/2 + n (mean - mu0)^2 / (2 (1 + n))`.
    fn beta_bar(&self, m: Moments) -> f64 {
        let d = m.mean - self.mu0;
        self.beta0 + 0.5 * m.m2 + m.n * d * d / (2.0 * (1.0 + m.n))
    }

    fn log_ml(&self, m: Moments) -> f64 {
        if m.n == 0.0 {
            return 0.0;
        }
        let a = self.alpha0 + 0.5 * m.n;
        ln_gamma(a) - ln_gamma(self.alpha0) + self.alpha0 * self.beta0.ln()
            - a * self.beta_bar(m).ln()
            - 0.5 * (1.0 + m.n).ln()
            - 0.5 * m.n * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Log marginal density of the rates in one cluster under the base measure.
pub fn log_marginal_likelihood(lambda_k: &[f64], base: &NigBase) -> f64 {
    base.log_ml(Moments::of(lambda_k.iter().copied()))
}

/// Redraws `theta[i]` from its full conditional given the rates.
pub fn update_assignment(
    i: usize,
    theta: &mut [usize],
    lambda: &[f64],
    base: &NigBase,
    affinity: &Affinity,
    beta: f64,
    rng: &mut crate::Rng,
) {
    let n = theta.len();
    theta[i] = i;
    let labels = cluster_labels(theta);
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut moments = vec![Moments::default(); k];
    for (w, &l) in labels.iter().enumerate() {
        moments[l].push(lambda[w]);
    }
    let own = labels[i];
    let own_ml = base.log_ml(moments[own]);
    // log gain from joining cluster l to i's cluster
    let gain: Vec<f64> = (0..k)
        .map(|l| {
            if l == own {
                0.0
            } else {
                base.log_ml(Moments::merge(moments[own], moments[l]))
                    - own_ml
                    - base.log_ml(moments[l])
            }
        })
        .collect();

    let mut log_w = Vec::with_capacity(n);
    for j in 0..n {
        let lw = if j == i {
            beta.ln()
        } else {
            affinity.get(i, j).ln() + gain[labels[j]]
        };
        log_w.push(lw);
    }
    theta[i] = sample_log_weights(&log_w, rng);
}

/// Index drawn with probability proportional to `exp(log_w)`.
fn sample_log_weights(log_w: &[f64], rng: &mut crate::Rng) -> usize {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = log_w.iter().map(|w| (w - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (j, w) in log_w.iter().enumerate() {
        let p = (w - max).exp();
        if p > 0.0 {
            last = j;
            if u < p {
                return j;
            }
            u -= p;
        }
    }
    last
}

/// `1 / sigma_k^2 ~ Gamma(alpha0 + n_k / 2, rate = beta_bar)`.
pub fn update_precision(lambda_k: &[f64], base: &NigBase, rng: &mut crate::Rng) -> Result<f64> {
    if lambda_k.is_empty() {
        return Err(Error::InvalidParameter("cluster has no members".into()));
    }
    let (shape, rate) = precision_conditional(lambda_k, base);
    let precision = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::InvalidParameter(format!("gamma({shape}, {rate}): {e}")))?
        .sample(rng);
    Ok(1.0 / precision)
}

/// Shape and rate of the gamma full conditional of `1 / sigma_k^2`, with
/// `m_k` integrated out.
pub fn precision_conditional(lambda_k: &[f64], base: &NigBase) -> (f64, f64) {
    let m = Moments::of(lambda_k.iter().copied());
    (base.alpha0 + 0.5 * m.n, base.beta_bar(m))
}

/// Mean and variance of the full conditional of `m_k`.
pub fn mean_conditional(lambda_k: &[f64], sigma_sq: f64, base: &NigBase) -> (f64, f64) {
    let n = lambda_k.len() as f64;
    let sum: f64 = lambda_k.iter().sum();
    ((base.mu0 + sum) / (1.0 + n), sigma_sq / (1.0 + n))
}

/// `m_k ~ N((mu0 + n_k mean_k) / (1 + n_k), sigma_k^2 / (1 + n_k))`.
pub fn update_mean(
    lambda_k: &[f64],
    sigma_sq: f64,
    base: &NigBase,
    rng: &mut crate::Rng,
) -> Result<f64> {
    if lambda_k.is_empty() {
        return Err(Error::InvalidParameter("cluster has no members".into()));
    }
    let (mean, var) = mean_conditional(lambda_k, sigma_sq, base);
    let eps: f64 = StandardNormal.sample(rng);
    Ok(mean + var.sqrt() * eps)
}

/// Chain state of the clustering model.
#[derive(Debug, Clone)]
pub struct ClusterState {
    pub gibbs: GibbsState,
    pub theta: AssignmentVector,
    /// Cluster of each ward, consistent with `theta`.
    pub labels: Vec<usize>,
    /// Per-cluster mean.
    pub m: Vec<f64>,
    /// Per-cluster variance.
    pub sigma_sq: Vec<f64>,
}

impl ClusterState {
    pub fn k(&self) -> usize {
        self.m.len()
    }

    /// Redraws `(sigma_sq, m)` for every current cluster.
    pub fn update_cluster_parameters(&mut self, base: &NigBase, rng: &mut crate::Rng) -> Result<()> {
        self.labels = cluster_labels(&self.theta);
        let parts = clusters(&self.theta);
        self.m.clear();
        self.sigma_sq.clear();
        for members in parts {
            let values: Vec<f64> = members.iter().map(|&w| self.gibbs.lambda[w]).collect();
            let s2 = update_precision(&values, base, rng)?;
            self.m.push(update_mean(&values, s2, base, rng)?);
            self.sigma_sq.push(s2);
        }
        Ok(())
    }

    fn prior(&self) -> GaussianPrior {
        let n = self.labels.len();
        GaussianPrior {
            mean: DVector::from_fn(n, |i, _| self.m[self.labels[i]]),
            precision: DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| {
                1.0 / self.sigma_sq[self.labels[i]]
            })),
        }
    }
}

/// Draws the rates with prior `N(m_{k(i)}, sigma_{k(i)}^2)` independently per ward.
pub fn update_rates_clustered(
    state: &mut ClusterState,
    data: &PairData,
    rng: &mut crate::Rng,
) -> Result<()> {
    let prior = state.prior();
    update_rates(&mut state.gibbs, data, &prior, rng)
}

/// Settings of the clustering sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub iterations: usize,
    pub burn_in: usize,
    /// Self-link weight of the assignment prior.
    pub beta: f64,
    pub base: NigBase,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { iterations: 100_000, burn_in: 1_000, beta: 1e-8, base: NigBase::default(), seed: 1 }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= burn_in < iterations (got {} and {})",
                self.burn_in, self.iterations
            )));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidParameter("beta must be positive and finite".into()));
        }
        self.base.validate()
    }
}

/// Output of [`fit_clustered`].
#[derive(Debug, Clone)]
pub struct ClusterFit {
    pub summary: PosteriorSummary,
    /// Number of clusters at every retained iteration.
    pub k_trace: Vec<usize>,
    /// Co-clustering frequency of every pair of wards.
    pub co_clustering: DMatrix<f64>,
    /// Sampled partition closest to `co_clustering` in Binder loss.
    pub modal_partition: Vec<usize>,
    pub sampling_seconds: f64,
}

impl ClusterFit {
    /// `(K, probability)` for every `K` visited, ascending in `K`.
    pub fn k_posterior(&self) -> Vec<(usize, f64)> {
        k_posterior(&self.k_trace)
    }

    /// Most frequent `K`, ties to the smaller value.
    pub fn modal_k(&self) -> usize {
        let post = self.k_posterior();
        let mut best = post[0];
        for &(k, p) in &post[1..] {
            if p > best.1 {
                best = (k, p);
            }
        }
        best.0
    }
}

/// Empirical distribution of a trace of cluster counts.
pub fn k_posterior(k_trace: &[usize]) -> Vec<(usize, f64)> {
    let mut counts = std::collections::BTreeMap::new();
    for &k in k_trace {
        *counts.entry(k).or_insert(0usize) += 1;
    }
    let total = k_trace.len() as f64;
    counts.into_iter().map(|(k, c)| (k, c as f64 / total)).collect()
}

/// Fraction of partitions in which each pair of wards shares a cluster.
pub fn co_clustering_matrix(trace: &[Vec<usize>]) -> Result<DMatrix<f64>> {
    let first = trace.first().ok_or_else(|| Error::InvalidParameter("empty trace".into()))?;
    let n = first.len();
    let mut m = DMatrix::zeros(n, n);
    for labels in trace {
        accumulate(&mut m, labels, 1.0);
    }
    Ok(m / trace.len() as f64)
}

fn accumulate(m: &mut DMatrix<f64>, labels: &[usize], weight: f64) {
    let n = labels.len();
    for i in 0..n {
        for j in 0..n {
            if labels[i] == labels[j] {
                m[(i, j)] += weight;
            }
        }
    }
}

/// Binder loss of `labels` against co-clustering probabilities.
fn binder_loss(labels: &[usize], co: &DMatrix<f64>) -> f64 {
    let n = labels.len();
    let mut loss = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let same = if labels[i] == labels[j] { 1.0 } else { 0.0 };
            loss += (same - co[(i, j)]).abs();
        }
    }
    loss
}

/// Runs the clustering Gibbs sampler.
///
/// A sweep draws the latents, the rates, every link `theta_i` in turn and
/// finally `(sigma_k^2, m_k)` for each cluster.
pub fn fit_clustered(
    tallies: &Tallies,
    affinity: &Affinity,
    config: &ClusterConfig,
) -> Result<ClusterFit> {
    config.validate()?;
    let n = tallies.n_wards();
    if affinity.len() != n {
        return Err(Error::InvalidParameter(format!(
            "affinity covers {} wards but there are {n}",
            affinity.len()
        )));
    }
    if tallies.active_pairs().next().is_none() {
        return Err(Error::InvalidParameter("no comparisons to fit".into()));
    }
    let data = PairData::new(tallies);
    let mut rng = crate::rng_for(config.seed, 0);
    let theta: Vec<usize> = (0..n).collect();
    let mut state = ClusterState {
        gibbs: GibbsState::new(&data, DVector::zeros(n), 1.0),
        labels: cluster_labels(&theta),
        theta,
        m: Vec::new(),
        sigma_sq: Vec::new(),
    };
    state.update_cluster_parameters(&config.base, &mut rng)?;

    let retained = config.iterations - config.burn_in;
    let mut lambda_rows = Vec::with_capacity(retained * n);
    let mut k_trace = Vec::with_capacity(retained);
    let mut partitions: HashMap<Vec<usize>, usize> = HashMap::new();

    let start = Instant::now();
    for it in 0..config.iterations {
        update_latents(&mut state.gibbs, &data, &mut rng)?;
        update_rates_clustered(&mut state, &data, &mut rng)?;
        for i in 0..n {
            update_assignment(
                i,
                &mut state.theta,
                state.gibbs.lambda.as_slice(),
                &config.base,
                affinity,
                config.beta,
                &mut rng,
            );
        }
        state.update_cluster_parameters(&config.base, &mut rng)?;
        if it >= config.burn_in {
            lambda_rows.extend(state.gibbs.lambda.iter());
            k_trace.push(state.k());
            *partitions.entry(state.labels.clone()).or_insert(0) += 1;
        }
    }
    let sampling_seconds = start.elapsed().as_secs_f64();

    let mut co = DMatrix::zeros(n, n);
    for (labels, &count) in &partitions {
        accumulate(&mut co, labels, count as f64);
    }
    co /= retained as f64;
    let modal_partition = partitions
        .keys()
        .map(|p| (binder_loss(p, &co), p))
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)))
        .map(|(_, p)| p.clone())
        .expect("at least one retained iteration");

    let samples = DMatrix::from_row_slice(retained, n, &lambda_rows);
    Ok(ClusterFit {
        summary: PosteriorSummary::from_samples(&samples, None),
        k_trace,
        co_clustering: co,
        modal_partition,
        sampling_seconds,
    })
}

/// Writes `ward,modal_cluster,p_same_as_neighbor_max`.
///
/// Clusters are numbered from 1; the last column is the largest
/// co-clustering probability with any adjacent ward (0 for isolated wards).
pub fn write_cluster_csv<W: Write>(writer: W, graph: &WardGraph, fit: &ClusterFit) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["ward", "modal_cluster", "p_same_as_neighbor_max"])?;
    for (i, id) in graph.ward_ids().iter().enumerate() {
        let p = graph
            .neighbours(i)
            .iter()
            .map(|&j| fit.co_clustering[(i, j)])
            .fold(0.0, f64::max);
        w.write_record([
            id.clone(),
            (fit.modal_partition[i] + 1).to_string(),
            p.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `K,probability`.
pub fn write_k_posterior_csv<W: Write>(writer: W, fit: &ClusterFit) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["K", "probability"])?;
    for (k, p) in fit.k_posterior() {
        w.write_record([k.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Checks that `theta` only points at valid wards and returns its partition.
pub fn validated_clusters(theta: &[usize]) -> Result<Vec<Vec<usize>>> {
    check_theta(theta)?;
    Ok(clusters(theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_for;

    #[test]
    fn partition_examples() {
        assert_eq!(clusters(&[0, 1, 2]), vec![vec![0], vec![1], vec![2]]);
        // one-based (1,4,4,3)
        assert_eq!(clusters(&[0, 3, 3, 2]), vec![vec![0], vec![1, 2, 3]]);
        // one-based (1,1,4,3)
        assert_eq!(clusters(&[0, 0, 3, 2]), vec![vec![0, 1], vec![2, 3]]);
        assert!(validated_clusters(&[0, 5]).is_err());
    }

    #[test]
    fn rewiring_inside_a_cluster_keeps_partition() {
        let a = cluster_labels(&[1, 2, 0, 3]);
        let b = cluster_labels(&[2, 0, 1, 3]);
        assert_eq!(a, b);
        assert_eq!(a, vec![0, 0, 0, 1]);
    }

    #[test]
    fn marginal_likelihood_examples() {
        let base = NigBase::default();
        assert_eq!(log_marginal_likelihood(&[], &base), 0.0);
        let expected = ln_gamma(1.5) - ln_gamma(1.0) - 0.5 * 2f64.ln()
            - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((log_marginal_likelihood(&[0.0], &base) - expected).abs() < 1e-14);
    }

    #[test]
    fn moments_merge_matches_direct() {
        let xs = [0.3, -1.2, 4.0, 2.2, 0.0];
        let a = Moments::of(xs[..2].iter().copied());
        let b = Moments::of(xs[2..].iter().copied());
        let m = Moments::merge(a, b);
        let d = Moments::of(xs.iter().copied());
        assert!((m.mean - d.mean).abs() < 1e-12 && (m.m2 - d.m2).abs() < 1e-12);
    }

    #[test]
    fn huge_beta_forces_self_links() {
        let aff = Affinity::from_matrix(DMatrix::from_element(3, 3, 1.0)).unwrap();
        let mut theta = vec![1, 2, 0];
        let mut rng = rng_for(3, 0);
        for _ in 0..20 {
            for i in 0..3 {
                update_assignment(i, &mut theta, &[0.0, 0.1, 0.2], &NigBase::default(), &aff, 1e300, &mut rng);
            }
        }
        assert_eq!(theta, vec![0, 1, 2]);
    }

    #[test]
    fn zero_affinity_keeps_singletons() {
        let aff = Affinity::from_matrix(DMatrix::zeros(4, 4)).unwrap();
        let mut theta = vec![0, 1, 2, 3];
        let mut rng = rng_for(4, 0);
        for _ in 0..50 {
            for i in 0..4 {
                update_assignment(i, &mut theta, &[0.0; 4], &NigBase::default(), &aff, 1e-8, &mut rng);
            }
        }
        assert_eq!(theta, vec![0, 1, 2, 3]);
    }

    #[test]
    fn mean_conditional_single_member() {
        let (m, v) = mean_conditional(&[3.0], 2.0, &NigBase { mu0: 1.0, ..NigBase::default() });
        assert_eq!((m, v), (2.0, 1.0));
    }

    #[test]
    fn co_clustering_examples() {
        let single = co_clustering_matrix(&[vec![0, 1, 2]]).unwrap();
        assert_eq!(single, DMatrix::identity(3, 3));
        let one = co_clustering_matrix(&[vec![0, 0, 0]]).unwrap();
        assert_eq!(one, DMatrix::from_element(3, 3, 1.0));
        let two = co_clustering_matrix(&[vec![0, 0, 1, 1], vec![0, 1, 1, 1]]).unwrap();
        assert_eq!(two[(0, 1)], 0.5);
        assert_eq!(two[(1, 2)], 0.5);
        assert_eq!(two[(2, 3)], 1.0);
        assert!(co_clustering_matrix(&[]).is_err());
    }

    #[test]
    fn k_posterior_counts() {
        assert_eq!(k_posterior(&[2, 3, 3, 3]), vec![(2, 0.25), (3, 0.75)]);
    }
}
