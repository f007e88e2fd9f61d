//! In-memory service state, a pure fold over the event log.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use rand::Rng as _;
use spatial_bt::schedule::build_schedule;
use spatial_bt::spatial::prior_covariance;
use spatial_bt::{rng_for, Mechanism, PosteriorSummary, ScheduleDistribution, WardGraph};

use crate::error::{Result, ServiceError};
use crate::events::Event;
use crate::fit::ResolvedFit;

#[derive(Debug, Clone, PartialEq)]
pub struct IssuedPair {
    /// `(left, right)` as shown to the judge.
    pub pair: (usize, usize),
    pub at: DateTime<Utc>,
}

impl IssuedPair {
    pub fn contains(&self, ward: usize) -> bool {
        self.pair.0 == ward || self.pair.1 == ward
    }

    pub fn matches(&self, a: usize, b: usize) -> bool {
        self.pair == (a, b) || self.pair == (b, a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeSession {
    pub registered_at: DateTime<Utc>,
    pub unknown: BTreeSet<usize>,
    /// Number of decisions made.
    pub comparisons: u32,
    pub skips: u32,
    pub issued: Option<IssuedPair>,
    /// Elapsed time of every decision, in milliseconds.
    pub decision_ms: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRow {
    pub judge: String,
    pub winner: usize,
    pub loser: usize,
    pub at: DateTime<Utc>,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitStatus {
    Pending,
    Completed {
        summary: PosteriorSummary,
        k_posterior: Option<Vec<(usize, f64)>>,
        seconds: f64,
    },
    Failed(String),
}

impl FitStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitStatus::Pending => "pending",
            FitStatus::Completed { .. } => "completed",
            FitStatus::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub config: ResolvedFit,
    pub requested_at: DateTime<Utc>,
    pub decisions: usize,
    pub status: FitStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub graph: WardGraph,
    pub mechanism: Mechanism,
    pub schedule: ScheduleDistribution,
    pub seed: u64,
    pub max_comparisons: Option<u32>,
    pub geojson: Option<serde_json::Value>,
    pub id_property: String,
    pub closed_at: Option<DateTime<Utc>>,
    pub judges: BTreeMap<String, JudgeSession>,
    pub decisions: Vec<DecisionRow>,
    pub skips: usize,
    pub unknown_events: usize,
    /// Pairs drawn so far; also the RNG stream of the next draw.
    pub issued_total: u64,
    pub abandoned: Vec<(String, (usize, usize))>,
    pub fits: BTreeMap<String, FitRecord>,
}

/// What `next_pair` should do for a judge.
#[derive(Debug, Clone, PartialEq)]
pub enum NextPair {
    /// The unanswered pair already issued.
    Existing(IssuedPair),
    /// A fresh draw to be committed.
    Issue(Event),
    Exhausted,
    CapReached,
}

/// A judge's answer, with wards resolved to indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Judgement {
    Decision { winner: usize, loser: usize },
    Skip,
    Unknown { ward: usize },
}

impl Study {
    pub fn is_open(&self) -> bool {
        self.closed_at.is_none()
    }

    pub fn judge(&self, judge: &str) -> Result<&JudgeSession> {
        self.judges.get(judge).ok_or(ServiceError::JudgeNotFound)
    }

    fn judge_mut(&mut self, judge: &str) -> Result<&mut JudgeSession> {
        self.judges.get_mut(judge).ok_or(ServiceError::JudgeNotFound)
    }

    pub fn ward_index(&self, id: &str) -> Result<usize> {
        self.graph
            .index_of(id)
            .ok_or_else(|| ServiceError::BadRequest(format!("unknown ward `{id}`")))
    }

    fn require_open(&self) -> Result<()> {
        if self.is_open() {
            Ok(())
        } else {
            Err(ServiceError::StudyClosed)
        }
    }

    /// Decides the next pair for `judge` without changing state.
    pub fn next_pair(&self, judge: &str, now: DateTime<Utc>) -> Result<NextPair> {
        self.require_open()?;
        let session = self.judge(judge)?;
        if let Some(issued) = &session.issued {
            return Ok(NextPair::Existing(issued.clone()));
        }
        if let Some(cap) = self.max_comparisons {
            if session.comparisons >= cap {
                return Ok(NextPair::CapReached);
            }
        }
        let excluded: Vec<usize> = session.unknown.iter().copied().collect();
        let Some(dist) = self.schedule.masked(&excluded) else {
            return Ok(NextPair::Exhausted);
        };
        let mut rng = rng_for(self.seed, self.issued_total);
        let (i, j) = dist.sampler().draw(&mut rng);
        let pair = if rng.random::<bool>() { (i, j) } else { (j, i) };
        Ok(NextPair::Issue(Event::PairIssued {
            study: self.id.clone(),
            judge: judge.to_string(),
            at: now,
            pair,
        }))
    }

    /// Validates an answer against the issued pair and builds its event.
    pub fn judgement(
        &self,
        judge: &str,
        judgement: Judgement,
        elapsed_ms: Option<u64>,
        now: DateTime<Utc>,
    ) -> Result<Event> {
        self.require_open()?;
        let session = self.judge(judge)?;
        let issued = session.issued.as_ref().ok_or(ServiceError::NoIssuedPair)?;
        let elapsed_ms = elapsed_ms
            .unwrap_or_else(|| (now - issued.at).num_milliseconds().max(0) as u64);
        let (study, judge) = (self.id.clone(), judge.to_string());
        Ok(match judgement {
            Judgement::Decision { winner, loser } => {
                if !issued.matches(winner, loser) || winner == loser {
                    return Err(ServiceError::PairMismatch);
                }
                Event::Decision { study, judge, at: now, winner, loser, elapsed_ms }
            }
            Judgement::Skip => Event::Skip { study, judge, at: now, pair: issued.pair, elapsed_ms },
            Judgement::Unknown { ward } => {
                if !issued.contains(ward) {
                    return Err(ServiceError::PairMismatch);
                }
                Event::Unknown { study, judge, at: now, ward, pair: issued.pair, elapsed_ms }
            }
        })
    }

    pub fn close(&self, now: DateTime<Utc>) -> Result<Event> {
        self.require_open()?;
        let abandoned = self
            .judges
            .iter()
            .filter_map(|(id, s)| s.issued.as_ref().map(|p| (id.clone(), p.pair)))
            .collect();
        Ok(Event::StudyClosed { study: self.id.clone(), at: now, abandoned })
    }

    /// Median decision time of a judge, in seconds.
    pub fn median_seconds(&self, judge: &str) -> Option<f64> {
        let ms = &self.judge(judge).ok()?.decision_ms;
        if ms.is_empty() {
            return None;
        }
        let v: Vec<f64> = ms.iter().map(|&m| m as f64 / 1000.0).collect();
        Some(spatial_bt::stats::median(&v))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ServiceState {
    pub studies: BTreeMap<String, Study>,
}

impl ServiceState {
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a Event>) -> Result<Self> {
        let mut state = Self::default();
        for (k, e) in events.into_iter().enumerate() {
            state
                .apply(e)
                .map_err(|err| ServiceError::Corrupt(format!("event {}: {err}", k + 1)))?;
        }
        Ok(state)
    }

    pub fn study(&self, id: &str) -> Result<&Study> {
        self.studies.get(id).ok_or_else(|| ServiceError::StudyNotFound(id.to_string()))
    }

    fn study_mut(&mut self, id: &str) -> Result<&mut Study> {
        self.studies.get_mut(id).ok_or_else(|| ServiceError::StudyNotFound(id.to_string()))
    }

    pub fn register_judge(&self, study: &str, judge: String, now: DateTime<Utc>) -> Result<Event> {
        let s = self.study(study)?;
        s.require_open()?;
        if s.judges.contains_key(&judge) {
            return Err(ServiceError::BadRequest("judge token collision".into()));
        }
        Ok(Event::JudgeRegistered { study: study.to_string(), judge, at: now })
    }

    /// Folds one event into the state.
    pub fn apply(&mut self, event: &Event) -> Result<()> {
        match event {
            Event::StudyCreated {
                study,
                at,
                ward_ids,
                edges,
                mechanism,
                seed,
                max_comparisons,
                geojson,
                id_property,
            } => {
                if self.studies.contains_key(study) {
                    return Err(ServiceError::BadRequest(format!("study `{study}` exists")));
                }
                let graph = WardGraph::new(ward_ids.clone(), edges)?;
                let sigma = prior_covariance(&graph, 1.0)?;
                let schedule = build_schedule(*mechanism, &graph, sigma.sigma())?;
                self.studies.insert(
                    study.clone(),
                    Study {
                        id: study.clone(),
                        created_at: *at,
                        graph,
                        mechanism: *mechanism,
                        schedule,
                        seed: *seed,
                        max_comparisons: *max_comparisons,
                        geojson: geojson.clone(),
                        id_property: id_property.clone(),
                        closed_at: None,
                        judges: BTreeMap::new(),
                        decisions: Vec::new(),
                        skips: 0,
                        unknown_events: 0,
                        issued_total: 0,
                        abandoned: Vec::new(),
                        fits: BTreeMap::new(),
                    },
                );
            }
            Event::JudgeRegistered { study, judge, at } => {
                let s = self.study_mut(study)?;
                s.require_open()?;
                s.judges.insert(
                    judge.clone(),
                    JudgeSession {
                        registered_at: *at,
                        unknown: BTreeSet::new(),
                        comparisons: 0,
                        skips: 0,
                        issued: None,
                        decision_ms: Vec::new(),
                    },
                );
            }
            Event::PairIssued { study, judge, at, pair } => {
                let s = self.study_mut(study)?;
                s.require_open()?;
                let n = s.graph.len();
                if pair.0 >= n || pair.1 >= n || pair.0 == pair.1 {
                    return Err(ServiceError::BadRequest("issued pair out of range".into()));
                }
                let session = s.judge_mut(judge)?;
                if session.issued.is_some() {
                    return Err(ServiceError::BadRequest("pair already issued".into()));
                }
                session.issued = Some(IssuedPair { pair: *pair, at: *at });
                s.issued_total += 1;
            }
            Event::Decision { study, judge, at, winner, loser, elapsed_ms } => {
                let s = self.study_mut(study)?;
                let session = s.judge_mut(judge)?;
                match &session.issued {
                    Some(p) if p.matches(*winner, *loser) => {}
                    _ => return Err(ServiceError::PairMismatch),
                }
                session.issued = None;
                session.comparisons += 1;
                session.decision_ms.push(*elapsed_ms);
                s.decisions.push(DecisionRow {
                    judge: judge.clone(),
                    winner: *winner,
                    loser: *loser,
                    at: *at,
                    elapsed_ms: *elapsed_ms,
                });
            }
            Event::Skip { study, judge, pair, .. } => {
                let s = self.study_mut(study)?;
                let session = s.judge_mut(judge)?;
                match &session.issued {
                    Some(p) if p.pair == *pair => {}
                    _ => return Err(ServiceError::PairMismatch),
                }
                session.issued = None;
                session.skips += 1;
                s.skips += 1;
            }
            Event::Unknown { study, judge, ward, pair, .. } => {
                let s = self.study_mut(study)?;
                let session = s.judge_mut(judge)?;
                match &session.issued {
                    Some(p) if p.pair == *pair && p.contains(*ward) => {}
                    _ => return Err(ServiceError::PairMismatch),
                }
                session.issued = None;
                session.unknown.insert(*ward);
                s.unknown_events += 1;
            }
            Event::StudyClosed { study, at, abandoned } => {
                let s = self.study_mut(study)?;
                s.require_open()?;
                for session in s.judges.values_mut() {
                    session.issued = None;
                }
                s.closed_at = Some(*at);
                s.abandoned = abandoned.clone();
            }
            Event::FitRequested { study, fit, at, config, decisions } => {
                let s = self.study_mut(study)?;
                s.fits.insert(
                    fit.clone(),
                    FitRecord {
                        config: config.clone(),
                        requested_at: *at,
                        decisions: *decisions,
                        status: FitStatus::Pending,
                    },
                );
            }
            Event::FitCompleted { study, fit, summary, k_posterior, seconds, .. } => {
                let record = self.fit_mut(study, fit)?;
                record.status = FitStatus::Completed {
                    summary: summary.clone(),
                    k_posterior: k_posterior.clone(),
                    seconds: *seconds,
                };
            }
            Event::FitFailed { study, fit, message, .. } => {
                self.fit_mut(study, fit)?.status = FitStatus::Failed(message.clone());
            }
        }
        Ok(())
    }

    fn fit_mut(&mut self, study: &str, fit: &str) -> Result<&mut FitRecord> {
        self.study_mut(study)?
            .fits
            .get_mut(fit)
            .ok_or_else(|| ServiceError::FitNotFound(fit.to_string()))
    }
}
