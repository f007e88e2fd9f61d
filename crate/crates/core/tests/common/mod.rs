//! Independent numerical oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use spatial_bt::bsbt::{
    apply_identifiability, fit, mh_baseline_fit, update_alpha_sq, update_latents, update_rates,
    FitConfig, GaussianPrior, GibbsState, MhConfig, PairData,
};
use spatial_bt::cluster::{update_assignment, NigBase};
use spatial_bt::diagnostics::mc_standard_error;
use spatial_bt::spatial::{prior_covariance, spd_inverse, Affinity, MvnSampler};
use spatial_bt::{bt, rng_for, stats, Tallies, WardGraph};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for k in 0..7 {
        let x = h * XGK[k];
        let s = f(c - x) + f(c + x);
        kronrod += WGK[k] * s;
        if k % 2 == 1 {
            gauss += WG[k / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (k, err) = gk15(f, a, b);
    if err <= tol || depth >= 40 {
        return k;
    }
    let m = 0.5 * (a + b);
    adaptive(f, a, m, 0.5 * tol, depth + 1) + adaptive(f, m, b, 0.5 * tol, depth + 1)
}

/// Adaptive Gauss-Kronrod integral of `f` over `[a, b]` split into
/// `pieces` panels, to relative tolerance `rel`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, pieces: usize, rel: f64) -> f64 {
    let h = (b - a) / pieces as f64;
    let rough: f64 = (0..pieces).map(|k| gk15(f, a + k as f64 * h, a + (k + 1) as f64 * h).0).sum();
    let tol = (rel * rough.abs()).max(1e-300) / pieces as f64;
    (0..pieces)
        .map(|k| adaptive(f, a + k as f64 * h, a + (k + 1) as f64 * h, tol, 0))
        .sum()
}

fn ln_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * (x - mean).powi(2) / var
}

fn ln_inverse_gamma_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - statrs::function::gamma::ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

/// `int p(values | mu, s2)` over `mu` by quadrature.
fn integrate_mean(values: &[f64], s2: f64, mu0: f64) -> f64 {
    let sd = s2.sqrt();
    let lo = values.iter().copied().fold(mu0, f64::min) - 12.0 * sd;
    let hi = values.iter().copied().fold(mu0, f64::max) + 12.0 * sd;
    let f = |mu: f64| {
        let ll: f64 = values.iter().map(|&x| ln_normal_pdf(x, mu, s2)).sum::<f64>()
            + ln_normal_pdf(mu, mu0, s2);
        ll.exp()
    };
    integrate(&f, lo, hi, 32, 1e-12)
}

/// Marginal density of a cluster's rates under the normal-inverse-gamma base
/// measure, by nested quadrature over the mean and log variance.
pub fn marginal_likelihood_by_quadrature(values: &[f64], base: &NigBase) -> f64 {
    if values.is_empty() {
        return 1.0;
    }
    let outer = |t: f64| {
        let s2 = t.exp();
        let prior = ln_inverse_gamma_pdf(s2, base.alpha0, base.beta0) + t;
        integrate_mean(values, s2, base.mu0) * prior.exp()
    };
    integrate(&outer, -25.0, 25.0, 100, 1e-11)
}

/// Gamma density of the precision of one cluster given its rates, with the
/// mean integrated out numerically, normalised numerically.
pub fn precision_density_by_quadrature(values: &[f64], base: &NigBase) -> impl Fn(f64) -> f64 {
    let values = values.to_vec();
    let base = *base;
    let unnorm = move |tau: f64| {
        let prior = base.alpha0 * base.beta0.ln() - statrs::function::gamma::ln_gamma(base.alpha0)
            + (base.alpha0 - 1.0) * tau.ln()
            - base.beta0 * tau;
        integrate_mean(&values, 1.0 / tau, base.mu0) * prior.exp()
    };
    let z = integrate(&|t: f64| unnorm(t.exp()) * t.exp(), -25.0, 25.0, 100, 1e-11);
    move |tau: f64| unnorm(tau) / z
}

/// Density of `alpha_sq` given the rates, from the Gaussian prior density
/// and the inverse-gamma hyperprior, normalised numerically.
pub fn alpha_sq_density_by_quadrature(
    lambda: &DVector<f64>,
    correlation: &DMatrix<f64>,
    chi: f64,
    omega: f64,
) -> impl Fn(f64) -> f64 {
    let lambda = lambda.clone();
    let correlation = correlation.clone();
    let n = lambda.len() as f64;
    let unnorm = move |a: f64| {
        let cov = &correlation * a;
        let chol = cov.clone().cholesky().expect("positive definite");
        let solved = chol.solve(&lambda);
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let ln_mvn = -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det
            - 0.5 * lambda.dot(&solved);
        (ln_mvn + ln_inverse_gamma_pdf(a, chi, omega)).exp()
    };
    let z = integrate(&|t: f64| unnorm(t.exp()) * t.exp(), -25.0, 25.0, 100, 1e-11);
    move |a: f64| unnorm(a) / z
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// Critical value of the two-sample KS test at level `alpha`.
pub fn ks_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Sample mean, sample variance and their standard errors for iid draws.
pub fn moments_with_se(xs: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = stats::mean(xs);
    let var = stats::variance(xs);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    (mean, (var / n).sqrt(), var, ((m4 - var * var) / n).sqrt())
}

/// Unnormalised log posterior of a link vector with the rates held fixed.
fn ln_assignment_weight(
    theta: &[usize],
    lambda: &[f64],
    affinity: &Affinity,
    beta: f64,
    ml: &mut HashMap<Vec<usize>, f64>,
    base: &NigBase,
) -> f64 {
    let mut w: f64 = theta
        .iter()
        .enumerate()
        .map(|(i, &t)| if t == i { beta.ln() } else { affinity.get(i, t).ln() })
        .sum();
    for members in spatial_bt::cluster::clusters(theta) {
        let ln = *ml.entry(members.clone()).or_insert_with(|| {
            let vals: Vec<f64> = members.iter().map(|&i| lambda[i]).collect();
            marginal_likelihood_by_quadrature(&vals, base).ln()
        });
        w += ln;
    }
    w
}

/// Total variation between the assignment-only Gibbs sampler and exact
/// enumeration over all 27 link vectors of a three-ward toy.
pub fn assignment_gibbs_total_variation(sweeps: usize, seed: u64) -> f64 {
    let n = 3;
    let lambda = [-0.8, 0.1, 0.6];
    let graph = WardGraph::path(n).unwrap();
    let affinity = Affinity::communicability(&graph);
    let beta = 0.3;
    let base = NigBase::default();

    let mut cache = HashMap::new();
    let mut exact = vec![0.0; 27];
    for (s, p) in exact.iter_mut().enumerate() {
        let theta = [s / 9, (s / 3) % 3, s % 3];
        *p = ln_assignment_weight(&theta, &lambda, &affinity, beta, &mut cache, &base).exp();
    }
    let z: f64 = exact.iter().sum();
    exact.iter_mut().for_each(|p| *p /= z);

    let mut rng = rng_for(seed, 0);
    let mut theta = vec![0, 1, 2];
    let mut counts = vec![0usize; 27];
    for _ in 0..sweeps {
        for i in 0..n {
            update_assignment(i, &mut theta, &lambda, &base, &affinity, beta, &mut rng);
        }
        counts[theta[0] * 9 + theta[1] * 3 + theta[2]] += 1;
    }
    0.5 * counts
        .iter()
        .zip(&exact)
        .map(|(&c, &p)| (c as f64 / sweeps as f64 - p).abs())
        .sum::<f64>()
}

/// Largest absolute standardised difference between the Polya-Gamma and
/// Metropolis posterior means on a triangle with `per_pair` comparisons of each pair. Also returns
/// the Metropolis acceptance rate.
pub fn mh_vs_pg_triangle(per_pair: usize, seed: u64) -> (f64, f64) {
    let graph = WardGraph::complete(3).unwrap();
    let mut rng = rng_for(seed, 0);
    let lambda = [0.8, 0.0, -0.6];
    let pairs: Vec<(usize, usize)> = (0..3 * per_pair).map(|k| [(0, 1), (0, 2), (1, 2)][k % 3]).collect();
    let outcomes = spatial_bt::sim::simulate_outcomes(&lambda, &pairs, &mut rng);
    let tallies = Tallies::from_outcomes(3, &outcomes).unwrap();
    let corr = prior_covariance(&graph, 1.0).unwrap().correlation().clone();

    let pg = fit(&tallies, &corr, &FitConfig { iterations: 40_000, burn_in: 500, seed, ..FitConfig::default() })
        .unwrap();
    let mh = mh_baseline_fit(
        &tallies,
        &corr,
        &MhConfig {
            fit: FitConfig { iterations: 200_000, burn_in: 2_000, seed: seed + 1, ..FitConfig::default() },
            step: 0.5,
        },
    )
    .unwrap();
    let mut worst = 0.0f64;
    for w in 0..3 {
        let (a, b) = (pg.lambda_chain(w), mh.lambda_chain(w));
        let se = (mc_standard_error(&a).unwrap().powi(2) + mc_standard_error(&b).unwrap().powi(2)).sqrt();
        worst = worst.max((stats::mean(&a) - stats::mean(&b)).abs() / se);
    }
    (worst, mh.acceptance_rate.unwrap())
}

/// Geweke joint-distribution test on the four-cycle: largest |z| over the
/// first and second moments of every rate.
pub fn geweke_cycle(sweeps: usize, seed: u64) -> f64 {
    let n = 4;
    let graph = WardGraph::cycle(n).unwrap();
    let corr = prior_covariance(&graph, 1.0).unwrap().correlation().clone();
    let corr_precision = spd_inverse(&corr).unwrap();
    let corr_total = corr.sum();
    let (chi, omega) = (5.0, 4.0);
    let pairs: Vec<(usize, usize)> =
        spatial_bt::PairIndex::new(n).iter().flat_map(|p| [p, p, p]).collect();
    let unit = MvnSampler::new(&corr).unwrap();
    let mut rng = rng_for(seed, 0);
    let draw_alpha_sq = |rng: &mut spatial_bt::Rng| -> f64 {
        omega / Gamma::new(chi, 1.0).unwrap().sample(rng)
    };

    // forward draws from the prior
    let mut forward: Vec<Vec<f64>> = vec![Vec::new(); 2 * n];
    for _ in 0..sweeps {
        let a = draw_alpha_sq(&mut rng);
        let lam = unit.sample(&mut rng) * a.sqrt();
        for i in 0..n {
            forward[i].push(lam[i]);
            forward[n + i].push(lam[i] * lam[i]);
        }
    }

    // Gibbs with the data regenerated each sweep
    let a0 = draw_alpha_sq(&mut rng);
    let lam0 = unit.sample(&mut rng) * a0.sqrt();
    let mut state: Option<GibbsState> = None;
    let mut successive: Vec<Vec<f64>> = vec![Vec::new(); 2 * n];
    let (mut lam, mut a) = (lam0, a0);
    for _ in 0..sweeps {
        let outcomes = spatial_bt::sim::simulate_outcomes(lam.as_slice(), &pairs, &mut rng);
        let tallies = Tallies::from_outcomes(n, &outcomes).unwrap();
        let data = PairData::new(&tallies);
        let mut s = state.take().unwrap_or_else(|| GibbsState::new(&data, lam.clone(), a));
        s.lambda = lam.clone();
        s.alpha_sq = a;
        update_latents(&mut s, &data, &mut rng).unwrap();
        let prior = GaussianPrior { mean: DVector::zeros(n), precision: &corr_precision / s.alpha_sq };
        update_rates(&mut s, &data, &prior, &mut rng).unwrap();
        update_alpha_sq(&mut s, &corr_precision, chi, omega, &mut rng).unwrap();
        apply_identifiability(&mut s, corr_total, &mut rng);
        lam = s.lambda.clone();
        a = s.alpha_sq;
        for i in 0..n {
            successive[i].push(lam[i]);
            successive[n + i].push(lam[i] * lam[i]);
        }
        state = Some(s);
    }

    let mut worst = 0.0f64;
    for (f, s) in forward.iter().zip(&successive) {
        let se_f = (stats::variance(f) / f.len() as f64).sqrt();
        let se_s = mc_standard_error(s).unwrap();
        let z = (stats::mean(f) - stats::mean(s)) / (se_f * se_f + se_s * se_s).sqrt();
        worst = worst.max(z.abs());
    }
    worst
}

/// Random symmetric positive-definite matrix `B B^T + eps I`.
pub fn random_spd(n: usize, rng: &mut spatial_bt::Rng) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    &b * b.transpose() + DMatrix::identity(n, n) * 1e-3
}

/// Direct product form of the likelihood including binomial coefficients.
pub fn likelihood_by_product(tallies: &Tallies, lambda: &[f64]) -> f64 {
    let mut p = 1.0;
    for (i, j, n, y) in tallies.active_pairs() {
        let pi = lambda[i].exp() / (lambda[i].exp() + lambda[j].exp());
        let binom = (1..=y).fold(1.0, |acc, k| acc * (n - y + k) as f64 / k as f64);
        p *= binom * pi.powi(y as i32) * (1.0 - pi).powi((n - y) as i32);
    }
    p
}

/// Fraction of replicates whose modal number of clusters is three, for
/// rates built from three contiguous regions with means -5, 0 and 5.
pub fn cluster_recovery(replicates: u64, comparisons: usize, iterations: usize, seed: u64) -> (usize, Vec<usize>) {
    use spatial_bt::cluster::{fit_clustered, ClusterConfig};
    use spatial_bt::schedule::{draw_schedule, uniform_schedule};
    let graph = WardGraph::study_region();
    let n = graph.len();
    let affinity = Affinity::communicability(&graph);
    let mut modes = Vec::new();
    for r in 0..replicates {
        let mut rng = rng_for(seed, r);
        let (lambda, _) = spatial_bt::sim::clustered_rates(&graph, &[-5.0, 0.0, 5.0], 0.25, &mut rng);
        let pairs = draw_schedule(&uniform_schedule(n).unwrap(), comparisons, &mut rng);
        let outcomes = spatial_bt::sim::simulate_outcomes(&lambda, &pairs, &mut rng);
        let tallies = Tallies::from_outcomes(n, &outcomes).unwrap();
        let config = ClusterConfig {
            iterations,
            burn_in: iterations / 5,
            seed: spatial_bt::sim::derive_seed(seed, r, 0),
            ..ClusterConfig::default()
        };
        modes.push(fit_clustered(&tallies, &affinity, &config).unwrap().modal_k());
    }
    (modes.iter().filter(|&&k| k == 3).count(), modes)
}

/// Log-likelihood helper re-exported for property tests.
pub fn log_likelihood(tallies: &Tallies, lambda: &[f64]) -> f64 {
    bt::log_likelihood(tallies, lambda)
}
