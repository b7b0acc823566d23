//! JSON-over-HTTP access to a loaded [`Engine`].

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::sync::Arc;
use tcf_core::json;
use tcf_core::service::{Engine, ServiceError, SCHEMA_VERSION};

pub fn router(engine: Engine) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/model", get(model))
        .route("/entities", get(entities))
        .route("/entities/{id}/history", get(history))
        .route("/forecast", post(forecast))
        .route("/recommend", post(recommend))
        .with_state(Arc::new(engine))
}

pub fn serve(engine: Engine, port: u16) -> Result<(), Box<dyn std::error::Error>> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
        log::info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(engine)).await
    })?;
    Ok(())
}

type Shared = State<Arc<Engine>>;

/// Serialised with the same float formatting as the command line.
fn json_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    let text = json::to_line(body).expect("response types serialise");
    (status, [(header::CONTENT_TYPE, "application/json")], text).into_response()
}

fn error(status: StatusCode, kind: &str, message: String, path: Option<String>) -> Response {
    let mut err = serde_json::json!({ "kind": kind, "message": message });
    if let Some(p) = path {
        err["path"] = p.into();
    }
    json_response(status, &serde_json::json!({ "schema_version": SCHEMA_VERSION, "error": err }))
}

fn service_error(e: ServiceError) -> Response {
    let (status, kind) = match &e {
        ServiceError::UnknownEntity(_) => (StatusCode::NOT_FOUND, "unknown_entity"),
        ServiceError::Horizon { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "horizon"),
        ServiceError::Invalid(_) | ServiceError::Net(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
    };
    error(status, kind, e.to_string(), None)
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, Response> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        error(StatusCode::BAD_REQUEST, "malformed", e.into_inner().to_string(), Some(path))
    })
}

async fn health() -> Response {
    json_response(StatusCode::OK, &serde_json::json!({ "status": "ok", "schema_version": SCHEMA_VERSION }))
}

async fn model(State(engine): Shared) -> Response {
    json_response(StatusCode::OK, &engine.model_info())
}

async fn entities(State(engine): Shared) -> Response {
    json_response(StatusCode::OK, &engine.entities())
}

async fn history(State(engine): Shared, Path(id): Path<String>) -> Response {
    match engine.history(&id) {
        Ok(h) => json_response(StatusCode::OK, &h),
        Err(e) => service_error(e),
    }
}

async fn forecast(State(engine): Shared, body: Bytes) -> Response {
    let result = parse(&body).and_then(|req| engine.forecast(&req).map_err(service_error));
    match result {
        Ok(r) => json_response(StatusCode::OK, &r),
        Err(resp) => resp,
    }
}

async fn recommend(State(engine): Shared, body: Bytes) -> Response {
    let result = parse(&body).and_then(|req| engine.recommend(&req).map_err(service_error));
    match result {
        Ok(r) => json_response(StatusCode::OK, &r),
        Err(resp) => resp,
    }
}
