mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use common::{fixture, ok};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tcf_cli::commands::load_engine;
use tcf_cli::http::router;
use tcf_core::effects::interaction_from_outcomes;
use tcf_core::net::OutcomeSet;
use tower::ServiceExt;

fn app() -> axum::Router {
    let f = fixture();
    router(load_engine(&f.ckpt, &f.data).unwrap())
}

async fn call(app: axum::Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn get(uri: &str) -> (StatusCode, Value) {
    call(app(), "GET", uri, None).await
}

async fn post(uri: &str, body: Value) -> (StatusCode, Value) {
    call(app(), "POST", uri, Some(body.to_string())).await
}

#[tokio::test]
async fn health() {
    let (s, v) = get("/health").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["schema_version"], 1);
}

#[tokio::test]
async fn model_info_carries_fingerprint_and_horizon() {
    let (s, v) = get("/model").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["tau_max"], 3);
    assert_eq!(v["k"], 2);
    assert_eq!(v["model_fingerprint"].as_str().unwrap().len(), 64);
    assert_eq!(v["schema_version"], 1);
}

#[tokio::test]
async fn entities_and_history() {
    let (s, v) = get("/entities").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["entities"].as_array().unwrap().len(), 24);
    let (s, v) = get("/entities/patient-00004/history").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["entity_id"], "patient-00004");
    assert!(!v["steps"].as_array().unwrap().is_empty());
    let (s, v) = get("/entities/nobody/history").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["kind"], "unknown_entity");
}

#[tokio::test]
async fn forecast_matches_cli_bit_for_bit() {
    let f = fixture();
    for (tau, plan) in [(1, json!([])), (3, json!([{"offset": 1, "a": [1, 1]}, {"offset": 3, "a": [0, 1]}]))] {
        let body = json!({"schema_version": 1, "entity_id": "patient-00007", "horizon": tau, "plan": plan});
        let (s, http) = post("/forecast", body.clone()).await;
        assert_eq!(s, StatusCode::OK, "{http}");
        let req = f.dir.join(format!("req{tau}.json"));
        std::fs::write(&req, body.to_string()).unwrap();
        let cli: Value = serde_json::from_str(&ok(&[
            "forecast", "--ckpt", f.ckpt.to_str().unwrap(), "--data", f.data.to_str().unwrap(), "--request", req.to_str().unwrap(),
        ]))
        .unwrap();
        assert_eq!(http, cli);
        assert_eq!(http["forecast"].as_array().unwrap().len(), tau);
        for (a, b) in http["forecast"].as_array().unwrap().iter().zip(cli["forecast"].as_array().unwrap()) {
            assert_eq!(a["y"].as_f64().unwrap().to_bits(), b["y"].as_f64().unwrap().to_bits());
        }
    }
}

#[tokio::test]
async fn interaction_recomputed_client_side() {
    for a in [[1, 1], [1, 0], [0, 0]] {
        let (s, v) = post("/forecast", json!({"entity_id": "patient-00002", "horizon": 2, "plan": [{"offset": 1, "a": a}]})).await;
        assert_eq!(s, StatusCode::OK);
        let set: OutcomeSet = serde_json::from_value(v["outcome_set"].clone()).unwrap();
        let server = v["interaction"].as_f64().unwrap();
        assert!((interaction_from_outcomes(&set, false) - server).abs() <= 1e-9);
        // by hand, independent of the library helper
        let singles: f64 = set.single.iter().zip(&set.a).filter(|(_, b)| **b == 1).map(|(s, _)| s - set.none).sum();
        assert!(((set.mixed - set.none) - singles - server).abs() <= 1e-9);
    }
}

#[tokio::test]
async fn error_statuses() {
    let (s, v) = post("/forecast", json!({"entity_id": "nobody", "horizon": 1})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["schema_version"], 1);
    let (s, v) = post("/forecast", json!({"entity_id": "patient-00001", "horizon": 4})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["kind"], "horizon");
    let (s, v) = post("/forecast", json!({"entity_id": "patient-00001", "horizon": "three"})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["path"], "horizon");
    let (s, v) = post("/forecast", json!({"entity_id": "patient-00001", "horizon": 1, "plan": [{"offset": 1, "a": [1, "x"]}]})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["path"], "plan[0].a[1]");
    let (s, _) = call(app(), "POST", "/forecast", Some("{not json".into())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = post("/recommend", json!({"entity_id": "patient-00001", "horizon": 9})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn recommend_ranks_and_is_stateless() {
    let body = json!({"entity_id": "patient-00005", "horizon": 3, "goal": "minimise"});
    let (s, first) = post("/recommend", body.clone()).await;
    assert_eq!(s, StatusCode::OK);
    let ranked = first["ranked"].as_array().unwrap();
    assert_eq!(ranked.len(), 1 + 3 * 3);
    let scores: Vec<f64> = ranked.iter().map(|r| r["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] <= w[1]));
    // a freshly built service answers identically
    let (_, again) = post("/recommend", body).await;
    assert_eq!(first, again);
}
