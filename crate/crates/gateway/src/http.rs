//! JSON-over-HTTP access to runs.
//!
//! ```text
//! GET  /runs
//! GET  /runs/{run}
//! GET  /runs/{run}/field?member=&step=&variable=&beta=b1,b2,b3&companions=
//! POST /runs/{run}/generate      GenerateRequest
//! POST /runs/{run}/interpolate   InterpolateRequest
//! POST /runs/{run}/spectra       SpectraRequest
//! ```

use crate::engine::{Engine, FieldQuery, GenerateRequest, InterpolateRequest, SpectraRequest};
use crate::error::GatewayError;
use crate::parse_beta;
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use std::sync::Arc;
use tokio::sync::Semaphore;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    /// Bounds the number of replays running at once.
    pub pool: Arc<Semaphore>,
}

pub struct ApiError(GatewayError);

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let kind = self.0.kind();
        let status = match kind {
            "not_found" => StatusCode::NOT_FOUND,
            "bad_request" => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = serde_json::json!({ "error": kind, "message": self.0.to_string() });
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(engine: Arc<Engine>, workers: usize) -> Router {
    let state = AppState {
        engine,
        pool: Arc::new(Semaphore::new(workers.max(1))),
    };
    Router::new()
        .route("/runs", get(list_runs))
        .route("/runs/:run", get(get_run))
        .route("/runs/:run/field", get(field))
        .route("/runs/:run/generate", post(generate))
        .route("/runs/:run/interpolate", post(interpolate))
        .route("/runs/:run/spectra", post(spectra))
        .with_state(state)
}

/// Runs `f` on the blocking pool once a worker slot is free.
async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> Result<T, GatewayError> + Send + 'static,
{
    let permit = state
        .pool
        .clone()
        .acquire_owned()
        .await
        .map_err(|e| GatewayError::Replay(e.to_string()))?;
    let engine = state.engine.clone();
    let out = tokio::task::spawn_blocking(move || {
        let _permit = permit;
        f(&engine)
    })
    .await
    .map_err(|e| GatewayError::Replay(format!("worker failed: {e}")))?;
    Ok(out?)
}

fn body<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError(GatewayError::BadRequest(format!("malformed body: {e}"))))
}

async fn list_runs(State(s): State<AppState>) -> ApiResult<Vec<crate::manifest::RunManifest>> {
    Ok(Json(blocking(&s, |e| e.list_runs()).await?))
}

async fn get_run(State(s): State<AppState>, Path(run): Path<String>) -> ApiResult<crate::manifest::RunManifest> {
    Ok(Json(blocking(&s, move |e| Ok(e.run(&run)?.manifest.clone())).await?))
}

#[derive(Debug, Deserialize)]
struct FieldParams {
    member: Option<usize>,
    step: Option<usize>,
    variable: Option<String>,
    beta: Option<String>,
    companions: Option<bool>,
}

async fn field(
    State(s): State<AppState>,
    Path(run): Path<String>,
    params: Result<Query<FieldParams>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<crate::engine::FieldResponse> {
    let Query(p) = params.map_err(|e| GatewayError::BadRequest(e.body_text()))?;
    let beta = p.beta.as_deref().map(parse_beta).transpose().map_err(GatewayError::BadRequest)?;
    Ok(Json(
        blocking(&s, move |e| {
            let r = e.run(&run)?;
            let q = FieldQuery {
                member: p.member.unwrap_or(0),
                step: p.step.unwrap_or(r.steps()),
                variable: p.variable.unwrap_or_else(|| r.variable_names()[0].clone()),
                beta,
                companions: p.companions.unwrap_or(false),
            };
            e.field(&r, &q)
        })
        .await?,
    ))
}

async fn generate(State(s): State<AppState>, Path(run): Path<String>, bytes: Bytes) -> ApiResult<crate::engine::GenerateResponse> {
    let req: GenerateRequest = body(&bytes)?;
    Ok(Json(blocking(&s, move |e| e.generate(&*e.run(&run)?, &req)).await?))
}

async fn interpolate(State(s): State<AppState>, Path(run): Path<String>, bytes: Bytes) -> ApiResult<crate::engine::FieldResponse> {
    let req: InterpolateRequest = body(&bytes)?;
    Ok(Json(blocking(&s, move |e| e.interpolate(&*e.run(&run)?, &req)).await?))
}

async fn spectra(State(s): State<AppState>, Path(run): Path<String>, bytes: Bytes) -> ApiResult<crate::engine::SpectraResponse> {
    let req: SpectraRequest = body(&bytes)?;
    Ok(Json(blocking(&s, move |e| e.spectra(&*e.run(&run)?, &req)).await?))
}

/// Serves `router` on `addr` until interrupted.
pub async fn serve(engine: Arc<Engine>, addr: &str, workers: usize) -> Result<(), GatewayError> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(engine, workers))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
