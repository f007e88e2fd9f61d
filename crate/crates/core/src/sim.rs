//! Simulation studies: scheduling utility comparison and sampler benchmark.

use std::io::Write;

use chrono::{DateTime, Duration, Utc};
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::bsbt::{fit, mh_baseline_fit, BsbtFit, FitConfig, MhConfig};
use crate::bt::{win_probability, ComparisonRecord, RateVector, Tallies};
use crate::diagnostics::{effective_sample_size, mc_standard_error};
use crate::error::{Error, Result};
use crate::graph::WardGraph;
use crate::schedule::{build_schedule, draw_schedule, utility, Mechanism};
use crate::spatial::{prior_covariance, sample_prior, SpatialCovariance};
use crate::stats;

/// Mixes a master seed with up to two counters into a new seed.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    // splitmix64 finaliser
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// One draw of the rates from the prior.
pub fn simulate_rates(cov: &SpatialCovariance, rng: &mut crate::Rng) -> Result<RateVector> {
    sample_prior(cov, rng)
}

/// `(winner, loser)` for each scheduled pair under the Bradley-Terry model.
pub fn simulate_outcomes(
    lambda: &[f64],
    pairs: &[(usize, usize)],
    rng: &mut crate::Rng,
) -> Vec<(usize, usize)> {
    pairs
        .iter()
        .map(|&(i, j)| {
            if rng.random::<f64>() < win_probability(lambda[i], lambda[j]) {
                (i, j)
            } else {
                (j, i)
            }
        })
        .collect()
}

/// Start of the synthetic timeline used for simulated records.
pub fn simulation_epoch() -> DateTime<Utc> {
    DateTime::from_timestamp(1_577_836_800, 0).expect("valid timestamp")
}

/// One simulated judgement per scheduled pair, ten seconds apart.
pub fn simulate_comparisons(
    graph: &WardGraph,
    lambda: &[f64],
    pairs: &[(usize, usize)],
    rng: &mut crate::Rng,
) -> Vec<ComparisonRecord> {
    let t0 = simulation_epoch();
    simulate_outcomes(lambda, pairs, rng)
        .into_iter()
        .enumerate()
        .map(|(k, (w, l))| ComparisonRecord {
            winner: graph.ward_id(w).to_string(),
            loser: graph.ward_id(l).to_string(),
            judge: "sim".to_string(),
            timestamp: t0 + Duration::seconds(10 * k as i64),
        })
        .collect()
}

/// Settings of the scheduling utility study.
#[derive(Debug, Clone)]
pub struct DesignStudyConfig {
    pub graph: WardGraph,
    pub alpha: f64,
    pub comparisons: usize,
    pub replicates: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub mechanisms: Vec<Mechanism>,
    pub seed: u64,
    /// Run replicates on the rayon pool.
    pub parallel: bool,
}

impl DesignStudyConfig {
    pub fn new(graph: WardGraph) -> Self {
        Self {
            graph,
            alpha: 3.0,
            comparisons: 500,
            replicates: 100,
            iterations: 500,
            burn_in: 50,
            mechanisms: Mechanism::ALL.to_vec(),
            seed: 1,
            parallel: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || self.comparisons == 0 || self.replicates == 0 {
            return Err(Error::InvalidParameter(
                "alpha, comparisons and replicates must be positive".into(),
            ));
        }
        if self.mechanisms.is_empty() {
            return Err(Error::InvalidParameter("no mechanisms to compare".into()));
        }
        self.fit_config(0).validate()
    }

    fn fit_config(&self, seed: u64) -> FitConfig {
        FitConfig { iterations: self.iterations, burn_in: self.burn_in, seed, ..FitConfig::default() }
    }
}

/// Utility of one mechanism in one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicateUtility {
    pub mechanism: Mechanism,
    pub replicate: usize,
    pub utility: f64,
}

/// Mean, minimum and maximum utility of one mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UtilityReport {
    pub mechanism: Mechanism,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignStudyReport {
    pub replicates: Vec<ReplicateUtility>,
    pub summary: Vec<UtilityReport>,
}

impl DesignStudyReport {
    pub fn mechanism(&self, m: Mechanism) -> Option<&UtilityReport> {
        self.summary.iter().find(|r| r.mechanism == m)
    }
}

fn run_replicate(
    config: &DesignStudyConfig,
    cov: &SpatialCovariance,
    schedules: &[(Mechanism, crate::schedule::ScheduleDistribution)],
    r: usize,
) -> Result<Vec<ReplicateUtility>> {
    let mut rng = crate::rng_for(config.seed, r as u64);
    let lambda = simulate_rates(cov, &mut rng)?;
    let n = config.graph.len();
    let mut out = Vec::with_capacity(schedules.len());
    for (k, (mechanism, dist)) in schedules.iter().enumerate() {
        let pairs = draw_schedule(dist, config.comparisons, &mut rng);
        let outcomes = simulate_outcomes(&lambda, &pairs, &mut rng);
        let tallies = Tallies::from_outcomes(n, &outcomes)?;
        let fc = config.fit_config(derive_seed(config.seed, r as u64, k as u64 + 1));
        let result = fit(&tallies, cov.correlation(), &fc)?;
        out.push(ReplicateUtility {
            mechanism: *mechanism,
            replicate: r,
            utility: utility(&result.lambda_samples)?,
        });
    }
    Ok(out)
}

/// Compares scheduling mechanisms by the posterior precision they yield.
///
/// Each replicate draws true rates from the prior, then for every mechanism
/// draws a schedule, simulates the judgements, fits the spatial model and
/// records `1 / tr(cov)` of the posterior draws. Replicates that fail are
/// logged and left out.
pub fn run_design_study(config: &DesignStudyConfig) -> Result<DesignStudyReport> {
    config.validate()?;
    let cov = prior_covariance(&config.graph, config.alpha * config.alpha)?;
    let schedules = config
        .mechanisms
        .iter()
        .map(|&m| Ok((m, build_schedule(m, &config.graph, cov.sigma())?)))
        .collect::<Result<Vec<_>>>()?;
    let one = |r: usize| match run_replicate(config, &cov, &schedules, r) {
        Ok(v) => v,
        Err(e) => {
            log::warn!("replicate {r} abandoned: {e}");
            Vec::new()
        }
    };
    let per: Vec<Vec<ReplicateUtility>> = if config.parallel {
        (0..config.replicates).into_par_iter().map(one).collect()
    } else {
        (0..config.replicates).map(one).collect()
    };
    let replicates: Vec<ReplicateUtility> = per.into_iter().flatten().collect();
    let summary = config
        .mechanisms
        .iter()
        .filter_map(|&m| {
            let u: Vec<f64> =
                replicates.iter().filter(|r| r.mechanism == m).map(|r| r.utility).collect();
            (!u.is_empty()).then(|| UtilityReport {
                mechanism: m,
                mean: stats::mean(&u),
                min: u.iter().copied().fold(f64::INFINITY, f64::min),
                max: u.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                replicates: u.len(),
            })
        })
        .collect::<Vec<_>>();
    if summary.is_empty() {
        return Err(Error::Degenerate("every replicate failed".into()));
    }
    Ok(DesignStudyReport { replicates, summary })
}

/// Writes `mechanism,replicate,utility`.
pub fn write_replicates_csv<W: Write>(writer: W, report: &DesignStudyReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["mechanism", "replicate", "utility"])?;
    for r in &report.replicates {
        w.write_record([r.mechanism.as_str(), &r.replicate.to_string(), &r.utility.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `mechanism,mean,min,max`.
pub fn write_summary_csv<W: Write>(writer: W, report: &DesignStudyReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["mechanism", "mean", "min", "max"])?;
    for r in &report.summary {
        w.write_record([
            r.mechanism.as_str().to_string(),
            r.mean.to_string(),
            r.min.to_string(),
            r.max.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Settings of the Polya-Gamma versus Metropolis benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub comparisons: usize,
    pub alpha: f64,
    pub mechanism: Mechanism,
    pub iterations: usize,
    pub burn_in: usize,
    /// Metropolis sweeps, each updating every ward once.
    pub mh_iterations: usize,
    pub mh_step: f64,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            comparisons: 2_000,
            alpha: 3.0,
            mechanism: Mechanism::PrincipalComponent,
            iterations: 2_000,
            burn_in: 200,
            mh_iterations: 20_000,
            mh_step: 0.5,
            seed: 1,
        }
    }
}

/// Efficiency of one sampler over all rate coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplerStats {
    pub sampler: String,
    pub iterations: usize,
    pub seconds: f64,
    pub median_ess_per_sec: f64,
    pub min_ess_per_sec: f64,
    pub max_ess_per_sec: f64,
    pub acceptance_rate: Option<f64>,
    /// Posterior mean and Monte Carlo standard error per ward.
    #[serde(skip)]
    pub means: Vec<(f64, f64)>,
}

impl SamplerStats {
    fn from_fit(name: &str, fit: &BsbtFit) -> Result<Self> {
        let n = fit.lambda_samples.ncols();
        let mut rates = Vec::with_capacity(n);
        let mut means = Vec::with_capacity(n);
        for w in 0..n {
            let chain = fit.lambda_chain(w);
            rates.push(effective_sample_size(&chain)?.value / fit.sampling_seconds);
            means.push((stats::mean(&chain), mc_standard_error(&chain)?));
        }
        let mut sorted = rates.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            sampler: name.to_string(),
            iterations: fit.iterations,
            seconds: fit.sampling_seconds,
            median_ess_per_sec: stats::quantile_sorted(&sorted, 0.5),
            min_ess_per_sec: sorted[0],
            max_ess_per_sec: sorted[n - 1],
            acceptance_rate: fit.acceptance_rate,
            means,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub pg: SamplerStats,
    pub mh: SamplerStats,
    /// Wards whose two posterior means differ by less than three combined
    /// standard errors, as a fraction.
    pub agreement: f64,
}

impl BenchmarkReport {
    pub fn speedup(&self) -> f64 {
        self.pg.median_ess_per_sec / self.mh.median_ess_per_sec
    }
}

/// Fits one simulated data set with both samplers and compares ESS/s.
pub fn run_sampler_benchmark(graph: &WardGraph, config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    let cov = prior_covariance(graph, config.alpha * config.alpha)?;
    let mut rng = crate::rng_for(config.seed, 0);
    let lambda = simulate_rates(&cov, &mut rng)?;
    let dist = build_schedule(config.mechanism, graph, cov.sigma())?;
    let pairs = draw_schedule(&dist, config.comparisons, &mut rng);
    let tallies = Tallies::from_outcomes(graph.len(), &simulate_outcomes(&lambda, &pairs, &mut rng))?;

    let pg_config = FitConfig {
        iterations: config.iterations,
        burn_in: config.burn_in,
        seed: derive_seed(config.seed, 1, 0),
        ..FitConfig::default()
    };
    let mh_config = MhConfig {
        fit: FitConfig {
            iterations: config.mh_iterations,
            burn_in: config.burn_in,
            seed: derive_seed(config.seed, 2, 0),
            identifiability: false,
            ..FitConfig::default()
        },
        step: config.mh_step,
    };
    let pg = SamplerStats::from_fit("polya_gamma", &fit(&tallies, cov.correlation(), &pg_config)?)?;
    let mh = SamplerStats::from_fit(
        "metropolis",
        &mh_baseline_fit(&tallies, cov.correlation(), &mh_config)?,
    )?;
    let agree = pg
        .means
        .iter()
        .zip(&mh.means)
        .filter(|((a, sa), (b, sb))| (a - b).abs() < 3.0 * (sa * sa + sb * sb).sqrt())
        .count();
    let agreement = agree as f64 / graph.len() as f64;
    Ok(BenchmarkReport { pg, mh, agreement })
}

/// Writes one row per sampler.
pub fn write_benchmark_csv<W: Write>(writer: W, report: &BenchmarkReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "sampler",
        "iterations",
        "seconds",
        "median_ess_per_sec",
        "min_ess_per_sec",
        "max_ess_per_sec",
        "acceptance_rate",
    ])?;
    for s in [&report.pg, &report.mh] {
        w.write_record([
            s.sampler.clone(),
            s.iterations.to_string(),
            s.seconds.to_string(),
            s.median_ess_per_sec.to_string(),
            s.min_ess_per_sec.to_string(),
            s.max_ess_per_sec.to_string(),
            s.acceptance_rate.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Rates that are constant within contiguous regions of wards.
///
/// Regions grow by breadth-first search from `means.len()` mutually distant
/// seed wards, so each is connected when the graph is. Every rate is its
/// region mean plus `N(0, jitter^2)` noise. Returns the rates and the region
/// of each ward.
pub fn clustered_rates(
    graph: &WardGraph,
    means: &[f64],
    jitter: f64,
    rng: &mut crate::Rng,
) -> (Vec<f64>, Vec<usize>) {
    use rand_distr::{Distribution, StandardNormal};
    let n = graph.len();
    let k = means.len().clamp(1, n);
    let mut seeds = vec![0usize];
    let mut nearest: Vec<usize> = hops(graph, 0);
    while seeds.len() < k {
        let far = (0..n).max_by_key(|&w| (nearest[w], std::cmp::Reverse(w))).unwrap_or(0);
        seeds.push(far);
        for (d, e) in nearest.iter_mut().zip(hops(graph, far)) {
            *d = (*d).min(e);
        }
    }
    let mut region = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    for (r, &s) in seeds.iter().enumerate() {
        region[s] = r;
        queue.push_back(s);
    }
    while let Some(v) = queue.pop_front() {
        for &u in graph.neighbours(v) {
            if region[u] == usize::MAX {
                region[u] = region[v];
                queue.push_back(u);
            }
        }
    }
    for r in region.iter_mut().filter(|r| **r == usize::MAX) {
        *r = 0;
    }
    let lambda = (0..n)
        .map(|w| {
            let e: f64 = StandardNormal.sample(rng);
            means[region[w]] + jitter * e
        })
        .collect();
    (lambda, region)
}

fn hops(graph: &WardGraph, source: usize) -> Vec<usize> {
    graph.hop_distances(source).into_iter().map(|d| d.unwrap_or(usize::MAX)).collect()
}
