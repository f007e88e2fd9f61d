use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("study `{0}` not found")]
    StudyNotFound(String),
    #[error("judge not registered in this study")]
    JudgeNotFound,
    #[error("fit `{0}` not found")]
    FitNotFound(String),
    #[error("study is closed")]
    StudyClosed,
    #[error("no pair has been issued to this judge")]
    NoIssuedPair,
    #[error("judgement does not match the issued pair")]
    PairMismatch,
    #[error("fit `{0}` has not finished")]
    FitPending(String),
    #[error("fit failed: {0}")]
    FitFailed(String),
    #[error("no decisions to fit")]
    NoData,
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error("corrupt event log: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Model(#[from] spatial_bt::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ServiceError>;

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        use ServiceError::*;
        match self {
            StudyNotFound(_) | JudgeNotFound | FitNotFound(_) => StatusCode::NOT_FOUND,
            StudyClosed | NoIssuedPair | PairMismatch | FitPending(_) => StatusCode::CONFLICT,
            NoData | BadRequest(_) | Model(_) => StatusCode::UNPROCESSABLE_ENTITY,
            FitFailed(_) | Corrupt(_) | Io(_) | Json(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}
