use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use rand::Rng as _;
use spatial_bt::geo::{adjacency_from_polygons, read_polygons, DEFAULT_TOLERANCE};
use spatial_bt::{Mechanism, WardGraph};

use crate::error::{Result, ServiceError};
use crate::events::Event;
use crate::fit::{run_fit, FitJob, FitRequest};
use crate::state::{Judgement, NextPair, ServiceState};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub default_mechanism: Mechanism,
    /// Derives schedule seeds of studies created without one; random when absent.
    pub seed: Option<u64>,
    pub clock: Clock,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            default_mechanism: Mechanism::PrincipalComponent,
            seed: None,
            clock: Arc::new(Utc::now),
        }
    }
}

struct Inner {
    state: ServiceState,
    log: crate::store::EventLog,
}

/// Shared service handle: the state and the single writer of the event log.
pub struct App {
    inner: Mutex<Inner>,
    config: ServiceConfig,
}

/// Body of `POST /studies`.
#[derive(Debug, Clone, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateStudy {
    /// Ward ids; derived from `geojson` when absent.
    pub wards: Option<Vec<String>>,
    /// Adjacent ward id pairs; derived from `geojson` when `wards` is absent.
    #[serde(default)]
    pub edges: Vec<(String, String)>,
    pub mechanism: Option<Mechanism>,
    pub seed: Option<u64>,
    pub max_comparisons_per_judge: Option<u32>,
    pub geojson: Option<serde_json::Value>,
    pub id_property: Option<String>,
}

fn random_token() -> String {
    let bytes: [u8; 16] = rand::rng().random();
    hex::encode(bytes)
}

impl App {
    /// Opens the data directory and replays its log.
    pub fn open(config: ServiceConfig) -> Result<Arc<Self>> {
        let (log, events) = crate::store::EventLog::open(&config.data_dir)?;
        let state = ServiceState::replay(&events)?;
        log::info!("replayed {} events from {}", events.len(), log.path().display());
        Ok(Arc::new(Self { inner: Mutex::new(Inner { state, log }), config }))
    }

    pub fn data_dir(&self) -> &Path {
        &self.config.data_dir
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn now(&self) -> DateTime<Utc> {
        (self.config.clock)()
    }

    fn commit(inner: &mut Inner, event: Event) -> Result<()> {
        inner.log.append(&event)?;
        inner.state.apply(&event)
    }

    /// Copy of the current state.
    pub fn snapshot(&self) -> ServiceState {
        self.lock().state.clone()
    }

    pub fn read<T>(&self, f: impl FnOnce(&ServiceState) -> Result<T>) -> Result<T> {
        f(&self.lock().state)
    }

    pub fn create_study(&self, req: CreateStudy) -> Result<String> {
        let id_property = req.id_property.unwrap_or_else(|| "id".to_string());
        let graph = match (&req.wards, &req.geojson) {
            (Some(wards), _) => {
                let index = |id: &str| {
                    wards
                        .iter()
                        .position(|w| w == id)
                        .ok_or_else(|| ServiceError::BadRequest(format!("unknown ward `{id}` in edges")))
                };
                let edges = req
                    .edges
                    .iter()
                    .map(|(a, b)| Ok((index(a)?, index(b)?)))
                    .collect::<Result<Vec<_>>>()?;
                WardGraph::new(wards.clone(), &edges)?
            }
            (None, Some(geojson)) => {
                adjacency_from_polygons(&read_polygons(geojson, &id_property)?, DEFAULT_TOLERANCE)?
            }
            (None, None) => return Err(ServiceError::BadRequest("either wards or geojson is required".into())),
        };
        if graph.len() < 2 {
            return Err(ServiceError::BadRequest("a study needs at least two wards".into()));
        }
        let id = random_token();
        let mut inner = self.lock();
        let seed = req.seed.unwrap_or_else(|| match self.config.seed {
            Some(s) => spatial_bt::sim::derive_seed(s, inner.state.studies.len() as u64, 0),
            None => rand::rng().random(),
        });
        let event = Event::StudyCreated {
            study: id.clone(),
            at: self.now(),
            ward_ids: graph.ward_ids().to_vec(),
            edges: graph.edges(),
            mechanism: req.mechanism.unwrap_or(self.config.default_mechanism),
            seed,
            max_comparisons: req.max_comparisons_per_judge,
            geojson: req.geojson,
            id_property,
        };
        Self::commit(&mut inner, event)?;
        Ok(id)
    }

    pub fn register_judge(&self, study: &str) -> Result<String> {
        let now = self.now();
        let mut inner = self.lock();
        let judge = random_token();
        let event = inner.state.register_judge(study, judge.clone(), now)?;
        Self::commit(&mut inner, event)?;
        Ok(judge)
    }

    pub fn next_pair(&self, study: &str, judge: &str) -> Result<NextPair> {
        let now = self.now();
        let mut inner = self.lock();
        let next = inner.state.study(study)?.next_pair(judge, now)?;
        if let NextPair::Issue(event) = &next {
            Self::commit(&mut inner, event.clone())?;
            let issued = inner.state.study(study)?.judge(judge)?.issued.clone();
            return Ok(NextPair::Existing(issued.expect("pair was just issued")));
        }
        Ok(next)
    }

    /// Records an answer; returns the judge's decision count.
    pub fn submit(&self, study: &str, judge: &str, judgement: Judgement, elapsed_ms: Option<u64>) -> Result<u32> {
        let now = self.now();
        let mut inner = self.lock();
        let event = inner.state.study(study)?.judgement(judge, judgement, elapsed_ms, now)?;
        if let Event::Skip { pair, .. } = &event {
            log::info!("judge skipped pair {pair:?}");
        }
        Self::commit(&mut inner, event)?;
        Ok(inner.state.study(study)?.judge(judge)?.comparisons)
    }

    pub fn close_study(&self, study: &str) -> Result<Vec<(String, (usize, usize))>> {
        let now = self.now();
        let mut inner = self.lock();
        let event = inner.state.study(study)?.close(now)?;
        if let Event::StudyClosed { abandoned, .. } = &event {
            for (judge, pair) in abandoned {
                log::info!("study {study}: pair {pair:?} issued to {judge} abandoned at close");
            }
        }
        Self::commit(&mut inner, event)?;
        Ok(inner.state.study(study)?.abandoned.clone())
    }

    /// Registers a fit, or returns the existing one with the same
    /// configuration. The returned job, if any, still has to be run.
    pub fn request_fit(&self, study: &str, req: FitRequest) -> Result<(String, Option<FitJob>)> {
        let config = req.resolve();
        config.validate()?;
        let fit = config.id(study);
        let now = self.now();
        let mut inner = self.lock();
        let s = inner.state.study(study)?;
        if let Some(existing) = s.fits.get(&fit) {
            if !matches!(existing.status, crate::state::FitStatus::Failed(_)) {
                return Ok((fit, None));
            }
        }
        let outcomes: Vec<(usize, usize)> = s
            .decisions
            .iter()
            .filter(|d| config.selects(&d.judge))
            .map(|d| (d.winner, d.loser))
            .collect();
        if outcomes.is_empty() {
            return Err(ServiceError::NoData);
        }
        let job = FitJob {
            study: study.to_string(),
            fit: fit.clone(),
            graph: s.graph.clone(),
            outcomes,
            config: config.clone(),
        };
        let decisions = s.decisions.len();
        Self::commit(
            &mut inner,
            Event::FitRequested { study: study.to_string(), fit: fit.clone(), at: now, config, decisions },
        )?;
        Ok((fit, Some(job)))
    }

    /// Jobs for fits left pending by a previous run.
    pub fn pending_jobs(&self) -> Vec<FitJob> {
        let inner = self.lock();
        let mut jobs = Vec::new();
        for (sid, s) in &inner.state.studies {
            for (fid, f) in &s.fits {
                if f.status != crate::state::FitStatus::Pending {
                    continue;
                }
                let outcomes = s.decisions[..f.decisions]
                    .iter()
                    .filter(|d| f.config.selects(&d.judge))
                    .map(|d| (d.winner, d.loser))
                    .collect();
                jobs.push(FitJob {
                    study: sid.clone(),
                    fit: fid.clone(),
                    graph: s.graph.clone(),
                    outcomes,
                    config: f.config.clone(),
                });
            }
        }
        jobs
    }

    /// Runs a fit to completion and records the outcome.
    pub fn run_job(&self, job: &FitJob) -> Result<()> {
        let result = run_fit(job);
        let now = self.now();
        let event = match result {
            Ok(out) => Event::FitCompleted {
                study: job.study.clone(),
                fit: job.fit.clone(),
                at: now,
                summary: out.summary,
                k_posterior: out.k_posterior,
                seconds: out.seconds,
            },
            Err(e) => {
                log::warn!("fit {} failed: {e}", job.fit);
                Event::FitFailed { study: job.study.clone(), fit: job.fit.clone(), at: now, message: e.to_string() }
            }
        };
        let mut inner = self.lock();
        Self::commit(&mut inner, event)
    }

    /// Runs `job` on the blocking pool so judgement capture is never held up.
    pub fn spawn_job(self: &Arc<Self>, job: FitJob) -> tokio::task::JoinHandle<()> {
        let app = Arc::clone(self);
        tokio::task::spawn_blocking(move || {
            if let Err(e) = app.run_job(&job) {
                log::error!("recording fit {} failed: {e}", job.fit);
            }
        })
    }
}
