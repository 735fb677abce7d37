//! Helpers for driving the session router in-process.

#![allow(dead_code)]

use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::Value;
use tower::ServiceExt;
use vhcbm_core::data::EmbeddingDataset;

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call_raw(app, method, uri, body).await;
    let json = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, json)
}

pub async fn call_raw(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec())
}

/// Poll the session summary until `done` accepts it.
pub async fn wait_until(app: &Router, id: &str, done: impl Fn(&Value) -> bool) -> Value {
    let start = Instant::now();
    loop {
        let (status, summary) = call(app, "GET", &format!("/sessions/{id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        if done(&summary) {
            return summary;
        }
        assert!(start.elapsed() < Duration::from_secs(600), "session {id} stuck: {summary}");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

pub async fn wait_settled(app: &Router, id: &str) -> Value {
    wait_until(app, id, |s| s["phase"] != "fitting").await
}

pub async fn create(app: &Router, bundle: &str, config: Value) -> String {
    let (status, body) = call(app, "POST", "/sessions", Some(serde_json::json!({ "bundle": bundle, "config": config }))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["id"].as_str().unwrap().to_string()
}

/// Ground-truth answers for every pending query.
pub async fn ground_truth_batch(app: &Router, id: &str, dataset: &EmbeddingDataset) -> Vec<Value> {
    let (status, queries) = call(app, "GET", &format!("/sessions/{id}/queries"), None).await;
    assert_eq!(status, StatusCode::OK);
    queries
        .as_array()
        .unwrap()
        .iter()
        .map(|q| {
            let (s, c) = (q["sample"].as_u64().unwrap() as usize, q["concept"].as_u64().unwrap() as usize);
            serde_json::json!({ "sample": s, "concept": c, "value": dataset.annotation(s, c).unwrap() })
        })
        .collect()
}

/// Answer every round with ground truth in batches of `chunk`, until the session finishes.
pub async fn drive_to_completion(app: &Router, id: &str, dataset: &EmbeddingDataset, chunk: usize) -> Value {
    loop {
        let summary = wait_settled(app, id).await;
        assert!(summary["error"].is_null(), "{summary}");
        if summary["phase"] == "finished" {
            return summary;
        }
        assert_eq!(summary["phase"], "awaiting_annotations");
        let answers = ground_truth_batch(app, id, dataset).await;
        for batch in answers.chunks(chunk) {
            let (status, body) = call(app, "POST", &format!("/sessions/{id}/annotations"), Some(Value::from(batch.to_vec()))).await;
            assert_eq!(status, StatusCode::OK, "{body}");
            assert_eq!(body["accepted"], batch.len());
        }
    }
}
