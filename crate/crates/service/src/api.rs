//! HTTP routes.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use spatial_bt::bsbt::write_results_csv;
use spatial_bt::bt::write_comparisons;
use spatial_bt::geo::results_geojson;
use spatial_bt::{stats, ComparisonRecord};

use crate::app::{App, CreateStudy};
use crate::error::{Result, ServiceError};
use crate::fit::FitRequest;
use crate::state::{FitRecord, FitStatus, IssuedPair, Judgement, NextPair, Study};

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/studies", post(create_study))
        .route("/studies/{id}", get(study_info))
        .route("/studies/{id}/close", post(close_study))
        .route("/studies/{id}/judges", post(register_judge).get(judge_table))
        .route("/studies/{id}/judges/{jid}/next", get(next_pair))
        .route("/studies/{id}/judges/{jid}/judgements", post(submit))
        .route("/studies/{id}/export.csv", get(export_csv))
        .route("/studies/{id}/fits", post(create_fit))
        .route("/studies/{id}/fits/{fid}", get(fit_info))
        .route("/studies/{id}/fits/{fid}/results.csv", get(results_csv))
        .route("/studies/{id}/fits/{fid}/results.geojson", get(results_geo))
        .route("/studies/{id}/fits/{fid}/compare/{other}", get(compare_fits))
        .with_state(app)
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn create_study(State(app): State<Arc<App>>, ApiJson(req): ApiJson<CreateStudy>) -> Result<(StatusCode, Json<Value>)> {
    let id = app.create_study(req)?;
    let body = app.read(|st| Ok(study_json(st.study(&id)?)))?;
    Ok((StatusCode::CREATED, Json(body)))
}

fn study_json(s: &Study) -> Value {
    let pairs: Vec<Value> = s
        .schedule
        .pair_index()
        .iter()
        .zip(s.schedule.probabilities())
        .map(|((i, j), p)| json!([s.graph.ward_id(i), s.graph.ward_id(j), p]))
        .collect();
    json!({
        "id": s.id,
        "status": if s.is_open() { "open" } else { "closed" },
        "created_at": s.created_at,
        "mechanism": s.mechanism,
        "wards": s.graph.ward_ids(),
        "max_comparisons_per_judge": s.max_comparisons,
        "judges": s.judges.len(),
        "decisions": s.decisions.len(),
        "skips": s.skips,
        "unknown_events": s.unknown_events,
        "abandoned": s.abandoned.len(),
        "fits": s.fits.keys().collect::<Vec<_>>(),
        "schedule": pairs,
    })
}

async fn study_info(State(app): State<Arc<App>>, Path(id): Path<String>) -> Result<Json<Value>> {
    app.read(|st| Ok(Json(study_json(st.study(&id)?))))
}

async fn close_study(State(app): State<Arc<App>>, Path(id): Path<String>) -> Result<Json<Value>> {
    let abandoned = app.close_study(&id)?;
    Ok(Json(json!({ "status": "closed", "abandoned": abandoned.len() })))
}

async fn register_judge(State(app): State<Arc<App>>, Path(id): Path<String>) -> Result<(StatusCode, Json<Value>)> {
    let judge = app.register_judge(&id)?;
    let cap = app.read(|st| Ok(st.study(&id)?.max_comparisons))?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "judge": judge, "comparisons": 0, "recommended_max": cap })),
    ))
}

async fn judge_table(State(app): State<Arc<App>>, Path(id): Path<String>) -> Result<Json<Value>> {
    app.read(|st| {
        let s = st.study(&id)?;
        let rows: Vec<Value> = s
            .judges
            .iter()
            .map(|(jid, j)| {
                json!({
                    "judge": jid,
                    "comparisons": j.comparisons,
                    "skips": j.skips,
                    "unknown_wards": j.unknown.len(),
                    "median_seconds": s.median_seconds(jid),
                })
            })
            .collect();
        Ok(Json(Value::Array(rows)))
    })
}

fn pair_json(s: &Study, issued: &IssuedPair, comparisons: u32) -> Value {
    let ward = |i: usize| json!({ "index": i, "id": s.graph.ward_id(i) });
    json!({
        "status": "pair",
        "left": ward(issued.pair.0),
        "right": ward(issued.pair.1),
        "issued_at": issued.at,
        "comparisons": comparisons,
        "recommended_max": s.max_comparisons,
    })
}

async fn next_pair(State(app): State<Arc<App>>, Path((id, jid)): Path<(String, String)>) -> Result<Json<Value>> {
    let next = app.next_pair(&id, &jid)?;
    app.read(|st| {
        let s = st.study(&id)?;
        let comparisons = s.judge(&jid)?.comparisons;
        Ok(Json(match next {
            NextPair::Existing(issued) => pair_json(s, &issued, comparisons),
            NextPair::Exhausted => json!({ "status": "exhausted", "comparisons": comparisons }),
            NextPair::CapReached => json!({
                "status": "cap_reached",
                "comparisons": comparisons,
                "recommended_max": s.max_comparisons,
            }),
            NextPair::Issue(_) => unreachable!("issued pairs are committed by App::next_pair"),
        }))
    })
}

/// Body of `POST .../judgements`.
#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Submission {
    Decision { winner: String, loser: String, elapsed_ms: Option<u64> },
    Skip { elapsed_ms: Option<u64> },
    Unknown { ward: String, elapsed_ms: Option<u64> },
}

async fn submit(
    State(app): State<Arc<App>>,
    Path((id, jid)): Path<(String, String)>,
    ApiJson(body): ApiJson<Submission>,
) -> Result<Json<Value>> {
    let (judgement, elapsed, kind) = app.read(|st| {
        let s = st.study(&id)?;
        Ok(match &body {
            Submission::Decision { winner, loser, elapsed_ms } => (
                Judgement::Decision { winner: s.ward_index(winner)?, loser: s.ward_index(loser)? },
                *elapsed_ms,
                "decision",
            ),
            Submission::Skip { elapsed_ms } => (Judgement::Skip, *elapsed_ms, "skip"),
            Submission::Unknown { ward, elapsed_ms } => {
                (Judgement::Unknown { ward: s.ward_index(ward)? }, *elapsed_ms, "unknown")
            }
        })
    })?;
    let comparisons = app.submit(&id, &jid, judgement, elapsed)?;
    Ok(Json(json!({ "recorded": kind, "comparisons": comparisons })))
}

fn csv_response(body: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response()
}

async fn export_csv(State(app): State<Arc<App>>, Path(id): Path<String>) -> Result<Response> {
    let records: Vec<ComparisonRecord> = app.read(|st| {
        let s = st.study(&id)?;
        Ok(s.decisions
            .iter()
            .map(|d| ComparisonRecord {
                winner: s.graph.ward_id(d.winner).to_string(),
                loser: s.graph.ward_id(d.loser).to_string(),
                judge: d.judge.clone(),
                timestamp: d.at,
            })
            .collect())
    })?;
    let mut buf = Vec::new();
    write_comparisons(&mut buf, &records)?;
    Ok(csv_response(buf))
}

async fn create_fit(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<(StatusCode, Json<Value>)> {
    let req: FitRequest = if body.iter().all(u8::is_ascii_whitespace) {
        FitRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(e.to_string()))?
    };
    let (fit, job) = app.request_fit(&id, req)?;
    let code = if job.is_some() { StatusCode::ACCEPTED } else { StatusCode::OK };
    if let Some(job) = job {
        app.spawn_job(job);
    }
    let body = app.read(|st| Ok(fit_json(&fit, fit_record(st.study(&id)?, &fit)?)))?;
    Ok((code, Json(body)))
}

fn fit_record<'a>(s: &'a Study, fit: &str) -> Result<&'a FitRecord> {
    s.fits.get(fit).ok_or_else(|| ServiceError::FitNotFound(fit.to_string()))
}

fn fit_json(id: &str, f: &FitRecord) -> Value {
    let mut v = json!({
        "fit": id,
        "status": f.status.as_str(),
        "config": f.config,
        "decisions": f.decisions,
        "requested_at": f.requested_at,
    });
    match &f.status {
        FitStatus::Completed { summary, k_posterior, seconds } => {
            v["seconds"] = json!(seconds);
            v["alpha"] = json!(summary.alpha);
            if let Some(k) = k_posterior {
                v["k_posterior"] = json!(k);
            }
        }
        FitStatus::Failed(msg) => v["message"] = json!(msg),
        FitStatus::Pending => {}
    }
    v
}

async fn fit_info(State(app): State<Arc<App>>, Path((id, fid)): Path<(String, String)>) -> Result<Json<Value>> {
    app.read(|st| Ok(Json(fit_json(&fid, fit_record(st.study(&id)?, &fid)?))))
}

fn completed<'a>(s: &'a Study, fid: &str) -> Result<&'a spatial_bt::PosteriorSummary> {
    match &fit_record(s, fid)?.status {
        FitStatus::Completed { summary, .. } => Ok(summary),
        FitStatus::Pending => Err(ServiceError::FitPending(fid.to_string())),
        FitStatus::Failed(msg) => Err(ServiceError::FitFailed(msg.clone())),
    }
}

async fn results_csv(State(app): State<Arc<App>>, Path((id, fid)): Path<(String, String)>) -> Result<Response> {
    let buf = app.read(|st| {
        let s = st.study(&id)?;
        let mut buf = Vec::new();
        write_results_csv(&mut buf, s.graph.ward_ids(), completed(s, &fid)?)?;
        Ok(buf)
    })?;
    Ok(csv_response(buf))
}

async fn results_geo(State(app): State<Arc<App>>, Path((id, fid)): Path<(String, String)>) -> Result<Json<Value>> {
    app.read(|st| {
        let s = st.study(&id)?;
        let summary = completed(s, &fid)?;
        Ok(Json(results_geojson(s.geojson.as_ref(), &s.id_property, s.graph.ward_ids(), &summary.wards)?))
    })
}

async fn compare_fits(
    State(app): State<Arc<App>>,
    Path((id, fid, other)): Path<(String, String, String)>,
) -> Result<Json<Value>> {
    app.read(|st| {
        let s = st.study(&id)?;
        let a = completed(s, &fid)?.medians();
        let b = completed(s, &other)?.medians();
        Ok(Json(json!({
            "pearson": stats::pearson(&a, &b),
            "spearman": stats::spearman(&a, &b),
        })))
    })
}

/// `Json` whose rejection is a JSON error body.
pub struct ApiJson<T>(pub T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ServiceError;

    async fn from_request(req: Request, state: &S) -> std::result::Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(e) => Err(ServiceError::BadRequest(e.body_text())),
        }
    }
}
