//! JSON-over-HTTP API for a PersonaFlow [`Engine`].
//!
//! Every handler hands its work to the blocking pool because the engine is
//! synchronous and some operations (merge, generate more) call the model
//! provider inline. Long pipelines run as jobs and return `202 Accepted`
//! with a job id to poll under `/jobs/{id}`.
//!
//! Writes that replace a versioned entity honor an `If-Match` header
//! carrying the version last read; a stale version answers `409`.

use std::collections::HashMap;
use std::net::SocketAddr;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use personaflow_core::connector::SyncRequest;
use personaflow_core::model::{PersonaId, PersonaProfile, RepoId};
use personaflow_core::personas::PersonaPatch;
use personaflow_core::service::{Engine, GenerationRequest, IssueQuery};
use personaflow_core::{Error, ErrorClass};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Builds the API router over `engine`.
pub fn router(engine: Engine) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/repos", post(submit_generation).get(list_repos))
        .route("/repos/{repo}", get(get_repo))
        .route("/repos/{repo}/save", post(save))
        .route(
            "/repos/{repo}/personas",
            get(list_personas).post(create_custom),
        )
        .route("/repos/{repo}/personas/generate", post(generate_more))
        .route("/repos/{repo}/personas/regenerate", post(regenerate_all))
        .route("/repos/{repo}/issues", get(list_issues))
        .route("/repos/{repo}/issues/sync", post(sync_issues))
        .route("/repos/{repo}/issues/map", post(map_issues))
        .route("/repos/{repo}/issues/{number}", get(issue_detail))
        .route(
            "/repos/{repo}/issues/{number}/associations",
            put(override_associations),
        )
        .route("/repos/{repo}/mapping-status", get(mapping_status))
        .route("/repos/{repo}/analytics", get(analytics))
        .route("/personas/merge", post(merge))
        .route(
            "/personas/{id}",
            get(get_persona).put(edit_persona).delete(archive_persona),
        )
        .route("/jobs", get(list_jobs))
        .route("/jobs/{id}", get(job_status))
        .with_state(engine)
}

/// Serves the API on `addr` until the process ends.
pub async fn serve(engine: Engine, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "personaflow api listening");
    axum::serve(listener, router(engine)).await
}

/// HTTP status for each failure class.
pub fn status_for(class: ErrorClass) -> StatusCode {
    match class {
        ErrorClass::Validation => StatusCode::BAD_REQUEST,
        ErrorClass::NotFound => StatusCode::NOT_FOUND,
        ErrorClass::Conflict => StatusCode::CONFLICT,
        ErrorClass::Provider | ErrorClass::Upstream => StatusCode::BAD_GATEWAY,
        ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

/// Wire name of a failure class, shared with the CLI's remote mode.
pub fn class_name(class: ErrorClass) -> &'static str {
    match class {
        ErrorClass::Validation => "validation",
        ErrorClass::NotFound => "not_found",
        ErrorClass::Conflict => "conflict",
        ErrorClass::Provider => "provider",
        ErrorClass::Upstream => "upstream",
        ErrorClass::Internal => "internal",
    }
}

/// Error body: `{"error": message, "class": class}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub class: String,
}

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let class = self.0.class();
        let body = ErrorBody {
            error: self.0.to_string(),
            class: class_name(class).into(),
        };
        (status_for(class), Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T, F>(engine: Engine, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> personaflow_core::Result<T> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| Error::Storage(format!("handler panicked: {e}")))?
        .map_err(ApiError)
}

/// Request bodies go through serde here rather than the `Json` extractor
/// so malformed input answers with the same error shape as everything else.
fn body<T: DeserializeOwned>(bytes: &[u8]) -> ApiResult<T> {
    let bytes: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) {
        b"{}"
    } else {
        bytes
    };
    serde_json::from_slice(bytes)
        .map_err(|e| ApiError(Error::InvalidParams(format!("request body: {e}"))))
}

fn if_match(headers: &HeaderMap) -> ApiResult<Option<u64>> {
    let Some(raw) = headers.get("if-match") else {
        return Ok(None);
    };
    raw.to_str()
        .ok()
        .map(|s| s.trim().trim_matches('"'))
        .and_then(|s| s.parse().ok())
        .map(Some)
        .ok_or_else(|| {
            ApiError(Error::InvalidParams(
                "If-Match must be an entity version".into(),
            ))
        })
}

fn accepted(job_id: String) -> Response {
    (StatusCode::ACCEPTED, Json(json!({ "job_id": job_id }))).into_response()
}

fn query_value<T: DeserializeOwned>(
    params: &HashMap<String, String>,
    key: &str,
) -> ApiResult<Option<T>> {
    match params.get(key).map(|s| s.trim()).filter(|s| !s.is_empty()) {
        None => Ok(None),
        Some(raw) => serde_json::from_value(Value::String(raw.to_string()))
            .map(Some)
            .map_err(|_| {
                ApiError(Error::InvalidParams(format!(
                    "bad value `{raw}` for `{key}`"
                )))
            }),
    }
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn submit_generation(
    State(engine): State<Engine>,
    bytes: axum::body::Bytes,
) -> ApiResult<Response> {
    let req: GenerationRequest = body(&bytes)?;
    let id = blocking(engine, move |e| e.submit_generation(req)).await?;
    Ok(accepted(id))
}

async fn list_repos(State(engine): State<Engine>) -> ApiResult<Response> {
    Ok(Json(blocking(engine, |e| Ok(e.repos())).await?).into_response())
}

async fn get_repo(State(engine): State<Engine>, Path(repo): Path<String>) -> ApiResult<Response> {
    let repo = RepoId(repo);
    Ok(Json(blocking(engine, move |e| e.repo(&repo)).await?).into_response())
}

async fn save(State(engine): State<Engine>, Path(repo): Path<String>) -> ApiResult<Response> {
    let repo = RepoId(repo);
    Ok(accepted(blocking(engine, move |e| e.save(&repo)).await?))
}

#[derive(Deserialize)]
struct ArchivedFlag {
    #[serde(default)]
    include_archived: bool,
}

async fn list_personas(
    State(engine): State<Engine>,
    Path(repo): Path<String>,
    Query(flag): Query<ArchivedFlag>,
) -> ApiResult<Response> {
    let repo = RepoId(repo);
    let list = blocking(engine, move |e| e.personas(&repo, flag.include_archived)).await?;
    Ok(Json(list).into_response())
}

async fn create_custom(
    State(engine): State<Engine>,
    Path(repo): Path<String>,
    bytes: axum::body::Bytes,
) -> ApiResult<Response> {
    let profile: PersonaProfile = body(&bytes)?;
    let repo = RepoId(repo);
    let view = blocking(engine, move |e| e.create_custom(&repo, profile)).await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

#[derive(Deserialize)]
struct GenerateMore {
    #[serde(default = "one")]
    count: usize,
}

fn one() -> usize {
    1
}

async fn generate_more(
    State(engine): State<Engine>,
    Path(repo): Path<String>,
    bytes: axum::body::Bytes,
) -> ApiResult<Response> {
    let req: GenerateMore = body(&bytes)?;
    let repo = RepoId(repo);
    let added = blocking(engine, move |e| e.generate_more(&repo, req.count)).await?;
    Ok((StatusCode::CREATED, Json(added)).into_response())
}

async fn regenerate_all(
    State(engine): State<Engine>,
    Path(repo): Path<String>,
) -> ApiResult<Response> {
    let repo = RepoId(repo);
    let fresh = blocking(engine, move |e| e.regenerate_all(&repo)).await?;
    Ok((StatusCode::CREATED, Json(fresh)).into_response())
}

async fn list_issues(
    State(engine): State<Engine>,
    Path(repo): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let query = IssueQuery {
        view: query_value(&params, "view")?.unwrap_or_default(),
        state: query_value(&params, "state")?,
        confidence_band: query_value(&params, "confidence_band")?,
        persona_id: query_value(&params, "persona_id")?,
    };
    let repo = RepoId(repo);
    Ok(Json(blocking(engine, move |e| e.issues(&repo, &query)).await?).into_response())
}

async fn sync_issues(
    State(engine): State<Engine>,
    Path(repo): Path<String>,
    bytes: axum::body::Bytes,
) -> ApiResult<Response> {
    let req: SyncRequest = body(&bytes)?;
    let repo = RepoId(repo);
    Ok(accepted(
        blocking(engine, move |e| e.submit_sync(&repo, req)).await?,
    ))
}

#[derive(Deserialize)]
struct MapRequest {
    #[serde(default)]
    force: bool,
}

async fn map_issues(
    State(engine): State<Engine>,
    Path(repo): Path<String>,
    bytes: axum::body::Bytes,
) -> ApiResult<Response> {
    let req: MapRequest = body(&bytes)?;
    let repo = RepoId(repo);
    Ok(accepted(
        blocking(engine, move |e| e.submit_mapping(&repo, req.force)).await?,
    ))
}

async fn issue_detail(
    State(engine): State<Engine>,
    Path((repo, number)): Path<(String, u64)>,
) -> ApiResult<Response> {
    let repo = RepoId(repo);
    Ok(Json(blocking(engine, move |e| e.issue_detail(&repo, number)).await?).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AssociationChange {
    #[serde(default)]
    add: Vec<PersonaId>,
    #[serde(default)]
    remove: Vec<PersonaId>,
}

async fn override_associations(
    State(engine): State<Engine>,
    Path((repo, number)): Path<(String, u64)>,
    headers: HeaderMap,
    bytes: axum::body::Bytes,
) -> ApiResult<Response> {
    let change: AssociationChange = body(&bytes)?;
    let version = if_match(&headers)?;
    let repo = RepoId(repo);
    let detail = blocking(engine, move |e| {
        e.override_associations(&repo, number, &change.add, &change.remove, version)
    })
    .await?;
    Ok(Json(detail).into_response())
}

async fn mapping_status(
    State(engine): State<Engine>,
    Path(repo): Path<String>,
) -> ApiResult<Response> {
    let repo = RepoId(repo);
    Ok(Json(blocking(engine, move |e| e.mapping_status(&repo)).await?).into_response())
}

async fn analytics(State(engine): State<Engine>, Path(repo): Path<String>) -> ApiResult<Response> {
    let repo = RepoId(repo);
    Ok(Json(blocking(engine, move |e| e.analytics(&repo)).await?).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MergeRequest {
    ids: Vec<PersonaId>,
    #[serde(default)]
    guidance: Option<String>,
}

async fn merge(State(engine): State<Engine>, bytes: axum::body::Bytes) -> ApiResult<Response> {
    let req: MergeRequest = body(&bytes)?;
    let merged = blocking(engine, move |e| e.merge(&req.ids, req.guidance.as_deref())).await?;
    Ok((StatusCode::CREATED, Json(merged)).into_response())
}

async fn get_persona(State(engine): State<Engine>, Path(id): Path<String>) -> ApiResult<Response> {
    let id = PersonaId(id);
    Ok(Json(blocking(engine, move |e| e.persona(&id)).await?).into_response())
}

async fn edit_persona(
    State(engine): State<Engine>,
    Path(id): Path<String>,
    headers: HeaderMap,
    bytes: axum::body::Bytes,
) -> ApiResult<Response> {
    let patch: PersonaPatch = body(&bytes)?;
    let version = if_match(&headers)?;
    let id = PersonaId(id);
    Ok(
        Json(blocking(engine, move |e| e.edit_persona(&id, &patch, version)).await?)
            .into_response(),
    )
}

async fn archive_persona(
    State(engine): State<Engine>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let version = if_match(&headers)?;
    let id = PersonaId(id);
    Ok(Json(blocking(engine, move |e| e.archive_persona(&id, version)).await?).into_response())
}

async fn list_jobs(State(engine): State<Engine>) -> ApiResult<Response> {
    Ok(Json(blocking(engine, |e| Ok(e.jobs())).await?).into_response())
}

async fn job_status(State(engine): State<Engine>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(blocking(engine, move |e| e.job_status(&id)).await?).into_response())
}
