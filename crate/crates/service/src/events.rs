//! Events of the append-only study log.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use spatial_bt::PosteriorSummary;
use spatial_bt::Mechanism;

use crate::fit::ResolvedFit;

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    StudyCreated {
        study: String,
        at: DateTime<Utc>,
        ward_ids: Vec<String>,
        edges: Vec<(usize, usize)>,
        mechanism: Mechanism,
        seed: u64,
        max_comparisons: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        geojson: Option<serde_json::Value>,
        id_property: String,
    },
    JudgeRegistered {
        study: String,
        judge: String,
        at: DateTime<Utc>,
    },
    PairIssued {
        study: String,
        judge: String,
        at: DateTime<Utc>,
        pair: (usize, usize),
    },
    Decision {
        study: String,
        judge: String,
        at: DateTime<Utc>,
        winner: usize,
        loser: usize,
        elapsed_ms: u64,
    },
    Skip {
        study: String,
        judge: String,
        at: DateTime<Utc>,
        pair: (usize, usize),
        elapsed_ms: u64,
    },
    Unknown {
        study: String,
        judge: String,
        at: DateTime<Utc>,
        ward: usize,
        pair: (usize, usize),
        elapsed_ms: u64,
    },
    StudyClosed {
        study: String,
        at: DateTime<Utc>,
        /// Pairs issued to judges but never answered.
        abandoned: Vec<(String, (usize, usize))>,
    },
    FitRequested {
        study: String,
        fit: String,
        at: DateTime<Utc>,
        config: ResolvedFit,
        /// Number of decisions in the study when the fit was requested.
        decisions: usize,
    },
    FitCompleted {
        study: String,
        fit: String,
        at: DateTime<Utc>,
        summary: PosteriorSummary,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k_posterior: Option<Vec<(usize, f64)>>,
        seconds: f64,
    },
    FitFailed {
        study: String,
        fit: String,
        at: DateTime<Utc>,
        message: String,
    },
}

impl Event {
    pub fn study(&self) -> &str {
        match self {
            Event::StudyCreated { study, .. }
            | Event::JudgeRegistered { study, .. }
            | Event::PairIssued { study, .. }
            | Event::Decision { study, .. }
            | Event::Skip { study, .. }
            | Event::Unknown { study, .. }
            | Event::StudyClosed { study, .. }
            | Event::FitRequested { study, .. }
            | Event::FitCompleted { study, .. }
            | Event::FitFailed { study, .. } => study,
        }
    }
}
