//! Fit requests and their execution against a study's decisions.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spatial_bt::spatial::{prior_covariance, Affinity};
use spatial_bt::{fit_clustered, ClusterConfig, FitConfig, NigBase, PosteriorSummary, Tallies, WardGraph};

use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    #[default]
    Bsbt,
    Cluster,
}

/// Body of `POST /studies/{id}/fits`. Missing fields take model defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitRequest {
    #[serde(default)]
    pub model: Model,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub seed: Option<u64>,
    pub chi: Option<f64>,
    pub omega: Option<f64>,
    pub beta: Option<f64>,
    pub mu0: Option<f64>,
    pub alpha0: Option<f64>,
    pub beta0: Option<f64>,
    /// Only decisions by these judges; all judges when absent.
    pub include_judges: Option<Vec<String>>,
    #[serde(default)]
    pub exclude_judges: Vec<String>,
}

/// A fit request with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedFit {
    pub model: Model,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub chi: f64,
    pub omega: f64,
    pub beta: f64,
    pub mu0: f64,
    pub alpha0: f64,
    pub beta0: f64,
    pub include_judges: Option<Vec<String>>,
    pub exclude_judges: Vec<String>,
}

fn sorted(mut v: Vec<String>) -> Vec<String> {
    v.sort();
    v.dedup();
    v
}

impl FitRequest {
    pub fn resolve(self) -> ResolvedFit {
        let bsbt = FitConfig::default();
        let cluster = ClusterConfig::default();
        let (iterations, burn_in) = match self.model {
            Model::Bsbt => (bsbt.iterations, bsbt.burn_in),
            Model::Cluster => (cluster.iterations, cluster.burn_in),
        };
        ResolvedFit {
            model: self.model,
            iterations: self.iterations.unwrap_or(iterations),
            burn_in: self.burn_in.unwrap_or(burn_in),
            seed: self.seed.unwrap_or(bsbt.seed),
            chi: self.chi.unwrap_or(bsbt.chi),
            omega: self.omega.unwrap_or(bsbt.omega),
            beta: self.beta.unwrap_or(cluster.beta),
            mu0: self.mu0.unwrap_or(cluster.base.mu0),
            alpha0: self.alpha0.unwrap_or(cluster.base.alpha0),
            beta0: self.beta0.unwrap_or(cluster.base.beta0),
            include_judges: self.include_judges.map(sorted),
            exclude_judges: sorted(self.exclude_judges),
        }
    }
}

impl ResolvedFit {
    /// Content hash of the study id and the resolved configuration.
    pub fn id(&self, study: &str) -> String {
        let mut h = Sha256::new();
        h.update(study.as_bytes());
        h.update([0]);
        h.update(serde_json::to_vec(self).expect("config serialises"));
        hex::encode(&h.finalize()[..8])
    }

    pub fn selects(&self, judge: &str) -> bool {
        let included = match &self.include_judges {
            Some(list) => list.iter().any(|j| j == judge),
            None => true,
        };
        included && !self.exclude_judges.iter().any(|j| j == judge)
    }

    pub fn validate(&self) -> Result<()> {
        self.fit_config().validate()?;
        self.cluster_config().validate()?;
        Ok(())
    }

    fn fit_config(&self) -> FitConfig {
        FitConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            chi: self.chi,
            omega: self.omega,
            seed: self.seed,
            ..FitConfig::default()
        }
    }

    fn cluster_config(&self) -> ClusterConfig {
        ClusterConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            beta: self.beta,
            base: NigBase { mu0: self.mu0, alpha0: self.alpha0, beta0: self.beta0 },
            seed: self.seed,
        }
    }
}

/// Everything a fit needs, detached from the service state.
#[derive(Debug, Clone)]
pub struct FitJob {
    pub study: String,
    pub fit: String,
    pub graph: WardGraph,
    /// `(winner, loser)` of every selected decision.
    pub outcomes: Vec<(usize, usize)>,
    pub config: ResolvedFit,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub summary: PosteriorSummary,
    pub k_posterior: Option<Vec<(usize, f64)>>,
    pub seconds: f64,
}

pub fn run_fit(job: &FitJob) -> Result<FitOutput> {
    if job.outcomes.is_empty() {
        return Err(ServiceError::NoData);
    }
    let tallies = Tallies::from_outcomes(job.graph.len(), &job.outcomes)?;
    match job.config.model {
        Model::Bsbt => {
            let prior = prior_covariance(&job.graph, 1.0)?;
            let fit = spatial_bt::fit(&tallies, prior.correlation(), &job.config.fit_config())?;
            Ok(FitOutput { summary: fit.summary, k_posterior: None, seconds: fit.sampling_seconds })
        }
        Model::Cluster => {
            let affinity = Affinity::communicability(&job.graph);
            let fit = fit_clustered(&tallies, &affinity, &job.config.cluster_config())?;
            Ok(FitOutput {
                k_posterior: Some(fit.k_posterior()),
                summary: fit.summary,
                seconds: fit.sampling_seconds,
            })
        }
    }
}
