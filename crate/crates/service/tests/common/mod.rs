//! In-process HTTP client for the study service.
#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use spatial_bt_service::{router, App, ServiceConfig};
use tower::ServiceExt;

pub struct Client {
    pub app: Arc<App>,
    router: Router,
}

impl Client {
    pub fn open(dir: &Path) -> Self {
        let app = App::open(ServiceConfig::new(dir)).expect("open data dir");
        Self { router: router(Arc::clone(&app)), app }
    }

    pub async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
        let builder = Request::builder().method(method).uri(uri);
        let req = match body {
            Some(v) => builder
                .header("content-type", "application/json")
                .body(Body::from(serde_json::to_vec(&v).unwrap())),
            None => builder.body(Body::empty()),
        }
        .unwrap();
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, bytes)
    }

    pub async fn get(&self, uri: &str) -> (StatusCode, Value) {
        let (s, b) = self.call(Method::GET, uri, None).await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    pub async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        let (s, b) = self.call(Method::POST, uri, Some(body)).await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    pub async fn text(&self, uri: &str) -> (StatusCode, String) {
        let (s, b) = self.call(Method::GET, uri, None).await;
        (s, String::from_utf8(b).unwrap())
    }

    pub async fn create_study(&self, body: Value) -> String {
        let (s, v) = self.post("/studies", body).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["id"].as_str().unwrap().to_string()
    }

    pub async fn register(&self, study: &str) -> String {
        let (s, v) = self.post(&format!("/studies/{study}/judges"), Value::Null).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["judge"].as_str().unwrap().to_string()
    }

    pub async fn next(&self, study: &str, judge: &str) -> Value {
        let (s, v) = self.get(&format!("/studies/{study}/judges/{judge}/next")).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        v
    }

    pub async fn judge(&self, study: &str, judge: &str, body: Value) -> (StatusCode, Value) {
        self.post(&format!("/studies/{study}/judges/{judge}/judgements"), body).await
    }

    /// Polls a fit until it leaves the pending state.
    pub async fn wait_for_fit(&self, study: &str, fit: &str) -> Value {
        for _ in 0..6000 {
            let (_, v) = self.get(&format!("/studies/{study}/fits/{fit}")).await;
            if v["status"] != "pending" {
                return v;
            }
            std::thread::sleep(std::time::Duration::from_millis(10));
        }
        panic!("fit {fit} did not finish");
    }
}

/// A `rows x cols` lattice study with rook adjacency.
pub fn grid_study(rows: usize, cols: usize, mechanism: &str) -> Value {
    let id = |r: usize, c: usize| format!("W{:02}", r * cols + c);
    let mut wards = Vec::new();
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            wards.push(id(r, c));
            if c + 1 < cols {
                edges.push(vec![id(r, c), id(r, c + 1)]);
            }
            if r + 1 < rows {
                edges.push(vec![id(r, c), id(r + 1, c)]);
            }
        }
    }
    serde_json::json!({ "wards": wards, "edges": edges, "mechanism": mechanism, "seed": 5 })
}

/// Winner and loser ids of a served pair, higher-numbered ward winning.
pub fn decide(pair: &Value) -> (String, String) {
    let l = pair["left"]["id"].as_str().unwrap().to_string();
    let r = pair["right"]["id"].as_str().unwrap().to_string();
    if l > r { (l, r) } else { (r, l) }
}
