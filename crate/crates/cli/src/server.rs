//! HTTP front end: `POST /synthesize`, `GET /model`, `GET /health`.

use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use gath_core::service::{is_client_error, Model, ModelInfo, SynthesisRequest};
use gath_core::GathError;

/// The served model. Requests clone the `Arc` and finish on that snapshot
/// even if [`AppState::swap`] installs a new one meanwhile.
#[derive(Default)]
pub struct AppState {
    model: RwLock<Option<Arc<Model>>>,
}

impl AppState {
    pub fn new(model: Option<Model>) -> Arc<Self> {
        Arc::new(AppState {
            model: RwLock::new(model.map(Arc::new)),
        })
    }

    pub fn swap(&self, model: Model) {
        *self.model.write().expect("model lock") = Some(Arc::new(model));
    }

    pub fn current(&self) -> Option<Arc<Model>> {
        self.model.read().expect("model lock").clone()
    }
}

pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    detail: String,
}

impl From<GathError> for ApiError {
    fn from(e: GathError) -> Self {
        let status = if is_client_error(&e) {
            StatusCode::UNPROCESSABLE_ENTITY
        } else {
            StatusCode::INTERNAL_SERVER_ERROR
        };
        ApiError {
            status,
            kind: e.kind(),
            detail: e.to_string(),
        }
    }
}

impl ApiError {
    fn no_model() -> Self {
        ApiError {
            status: StatusCode::SERVICE_UNAVAILABLE,
            kind: "no_model",
            detail: "no checkpoint loaded".into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.kind, "detail": self.detail }))).into_response()
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "model_loaded": state.current().is_some() }))
}

async fn model_info(State(state): State<Arc<AppState>>) -> Result<Json<ModelInfo>, ApiError> {
    let model = state.current().ok_or_else(ApiError::no_model)?;
    Ok(Json(model.info.clone()))
}

async fn synthesize(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: SynthesisRequest = serde_json::from_slice(&body).map_err(|e| ApiError {
        status: StatusCode::BAD_REQUEST,
        kind: "request",
        detail: e.to_string(),
    })?;
    let model = state.current().ok_or_else(ApiError::no_model)?;
    let png = tokio::task::spawn_blocking(move || model.handle(&req))
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            kind: "worker",
            detail: e.to_string(),
        })??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/model", get(model_info))
        .route("/synthesize", post(synthesize))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
