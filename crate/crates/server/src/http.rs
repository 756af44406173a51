//! HTTP surface: routing, bearer authentication, scope checks and the
//! one-entry-per-request audit middleware.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Path, RawQuery, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Extension, Json, Router};
use chrono::{DateTime, Utc};
use npds_core::questions::{AnswerQuery, Question, ServedAnswer};
use npds_core::recording::RecordingId;
use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::audit::AuditDraft;
use crate::error::{ApiError, ErrorCode};
use crate::grants::{SCOPE_AGGREGATE, SCOPE_OWNER_DELETE, SCOPE_OWNER_EXPORT, SCOPE_UPLOAD};
use crate::service::{Committed, DeleteRequest, Identity, OpenSession, Pds};

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Default)]
struct AuditNote {
    scope_used: Option<String>,
    subject_ids: Vec<String>,
}

/// The authenticated caller, plus what the handler wants recorded about
/// the request.
#[derive(Debug, Clone)]
pub struct Caller {
    pub identity: Identity,
    note: Arc<Mutex<AuditNote>>,
}

impl Caller {
    fn new(identity: Identity) -> Self {
        Caller { identity, note: Arc::default() }
    }

    fn use_scope(&self, scope: &str) {
        self.note.lock().scope_used = Some(scope.to_string());
    }

    fn touched(&self, ids: impl IntoIterator<Item = String>) {
        self.note.lock().subject_ids.extend(ids);
    }

    /// The owner passes every scope check.
    pub fn require(&self, scope: &str) -> ApiResult<()> {
        self.use_scope(scope);
        match &self.identity {
            Identity::Owner => Ok(()),
            Identity::Anonymous => Err(ApiError::unauthorized()),
            Identity::Client(auth) if auth.scopes.contains(scope) => Ok(()),
            Identity::Client(_) => Err(ApiError::new(ErrorCode::ScopeDenied, format!("token lacks scope {scope}"))),
        }
    }

    pub fn require_owner(&self) -> ApiResult<()> {
        match &self.identity {
            Identity::Owner => Ok(()),
            Identity::Anonymous => Err(ApiError::unauthorized()),
            Identity::Client(_) => Err(ApiError::new(ErrorCode::ScopeDenied, "owner credential required")),
        }
    }

    /// Like [`Caller::require`] but a valid token without the scope is
    /// `NotAuthorized`, the aggregation protocol's denial code.
    fn require_participation(&self) -> ApiResult<()> {
        self.require(SCOPE_AGGREGATE).map_err(|e| match e.code {
            ErrorCode::ScopeDenied => ApiError::new(ErrorCode::NotAuthorized, e.message),
            _ => e,
        })
    }
}

fn bearer(headers: &HeaderMap) -> Result<Option<&str>, ()> {
    let Some(value) = headers.get(header::AUTHORIZATION) else { return Ok(None) };
    let value = value.to_str().map_err(|_| ())?;
    let (scheme, token) = value.split_once(' ').ok_or(())?;
    if !scheme.eq_ignore_ascii_case("bearer") || token.trim().is_empty() {
        return Err(());
    }
    Ok(Some(token.trim()))
}

async fn audit_layer(State(pds): State<Arc<Pds>>, mut request: Request, next: Next) -> Response {
    let endpoint = format!("{} {}", request.method(), request.uri().path());
    let identity = match bearer(request.headers()) {
        Ok(b) => pds.identify(b),
        Err(()) => Err(None),
    };
    let (identity, response, note) = match identity {
        Ok(identity) => {
            let caller = Caller::new(identity.clone());
            request.extensions_mut().insert(caller.clone());
            let response = next.run(request).await;
            let note = std::mem::take(&mut *caller.note.lock());
            (identity, response, note)
        }
        Err(client) => {
            let draft = AuditDraft {
                client_id: client.unwrap_or_else(|| Identity::Anonymous.client_id().to_string()),
                endpoint,
                error: Some(ErrorCode::Unauthorized),
                ..Default::default()
            };
            return match pds.commit_audit(&Identity::Anonymous, draft) {
                Ok(_) => ApiError::unauthorized().into_response(),
                Err(e) => ApiError::internal(e).into_response(),
            };
        }
    };
    let error = response.extensions().get::<ErrorCode>().copied().or_else(|| ErrorCode::from_status(response.status()));
    let draft = AuditDraft {
        client_id: identity.client_id().to_string(),
        endpoint,
        scope_used: note.scope_used,
        subject_ids: if error.is_none() { note.subject_ids } else { Vec::new() },
        error,
    };
    match pds.commit_audit(&identity, draft) {
        Ok(Committed::Entry(_)) => response,
        Ok(Committed::Revoked(_)) => ApiError::unauthorized().into_response(),
        Err(e) => ApiError::internal(e).into_response(),
    }
}

fn body_bytes(body: Result<Bytes, BytesRejection>) -> ApiResult<Bytes> {
    body.map_err(|r| {
        let code = if r.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ErrorCode::PayloadTooLarge
        } else {
            ErrorCode::InvalidRequest
        };
        ApiError::new(code, r.body_text())
    })
}

fn json_body<T: DeserializeOwned>(body: Result<Bytes, BytesRejection>) -> ApiResult<T> {
    let bytes = body_bytes(body)?;
    serde_json::from_slice(&bytes).map_err(|e| ApiError::new(ErrorCode::InvalidRequest, format!("bad JSON body: {e}")))
}

fn query<T: DeserializeOwned>(raw: Option<String>) -> ApiResult<T> {
    serde_urlencoded::from_str(raw.as_deref().unwrap_or(""))
        .map_err(|e| ApiError::new(ErrorCode::InvalidRequest, format!("bad query: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

// recordings

async fn upload(
    State(pds): State<Arc<Pds>>,
    Extension(caller): Extension<Caller>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<impl IntoResponse> {
    caller.require(SCOPE_UPLOAD)?;
    let bytes = body_bytes(body)?;
    let receipt = blocking(move || pds.upload(bytes.to_vec())).await?;
    caller.touched([receipt.recording_id.to_string()]);
    let status = if receipt.created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(receipt)))
}

async fn list_recordings(State(pds): State<Arc<Pds>>, Extension(caller): Extension<Caller>) -> ApiResult<impl IntoResponse> {
    caller.require(SCOPE_OWNER_EXPORT)?;
    let list = pds.list_recordings();
    caller.touched(list.iter().map(|r| r.recording_id.to_string()));
    Ok(Json(list))
}

async fn export(State(pds): State<Arc<Pds>>, Extension(caller): Extension<Caller>) -> ApiResult<impl IntoResponse> {
    caller.require(SCOPE_OWNER_EXPORT)?;
    let (ids, bytes) = pds.export();
    caller.touched(ids.iter().map(|id| id.to_string()));
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes))
}

async fn raw(
    State(pds): State<Arc<Pds>>,
    Extension(caller): Extension<Caller>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    caller.require(SCOPE_OWNER_EXPORT)?;
    let bytes = pds.raw(&RecordingId::from(id.as_str()))?;
    caller.touched([id]);
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], Vec::clone(&bytes)))
}

async fn delete_recordings(
    State(pds): State<Arc<Pds>>,
    Extension(caller): Extension<Caller>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<impl IntoResponse> {
    caller.require(SCOPE_OWNER_DELETE)?;
    let request: DeleteRequest = json_body(body)?;
    let report = blocking(move || pds.delete(&request)).await?;
    caller.touched(report.deleted.iter().map(|id| id.to_string()));
    Ok(Json(report))
}

// grants

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GrantRequest {
    client_id: String,
    scopes: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionRequest {
    approve: bool,
}

async fn request_grant(
    State(pds): State<Arc<Pds>>,
    Extension(caller): Extension<Caller>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<impl IntoResponse> {
    let request: GrantRequest = json_body(body)?;
    let grant = pds.request_grant(&caller.identity, &request.client_id, &request.scopes)?;
    Ok((StatusCode::CREATED, Json(grant)))
}

async fn list_grants(State(pds): State<Arc<Pds>>, Extension(caller): Extension<Caller>) -> ApiResult<impl IntoResponse> {
    caller.require_owner()?;
    Ok(Json(pds.list_grants()))
}

async fn decide_grant(
    State(pds): State<Arc<Pds>>,
    Extension(caller): Extension<Caller>,
    Path(grant_id): Path<String>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<impl IntoResponse> {
    caller.require_owner()?;
    let request: DecisionRequest = json_body(body)?;
    Ok(Json(pds.decide_grant(&grant_id, request.approve)?))
}

async fn revoke_grant(
    State(pds): State<Arc<Pds>>,
    Extension(caller): Extension<Caller>,
    Path(grant_id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    caller.require_owner()?;
    Ok(Json(pds.revoke_grant(&grant_id)?))
}

// questions and answers

async fn list_questions(State(pds): State<Arc<Pds>>) -> Json<Vec<Question>> {
    Json(pds.questions())
}

async fn install_question(
    State(pds): State<Arc<Pds>>,
    Extension(caller): Extension<Caller>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<impl IntoResponse> {
    caller.require_owner()?;
    let question: Question = json_body(body)?;
    Ok((StatusCode::CREATED, Json(pds.install_question(question)?)))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerParams {
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
    subject: Option<String>,
}

async fn answers(
    State(pds): State<Arc<Pds>>,
    Extension(caller): Extension<Caller>,
    Path(question_id): Path<String>,
    RawQuery(raw_query): RawQuery,
) -> ApiResult<Json<Vec<ServedAnswer>>> {
    if caller.identity == Identity::Anonymous {
        return Err(ApiError::unauthorized());
    }
    let question = pds.question(&question_id)?;
    caller.require(&question.required_scope)?;
    let params: AnswerParams = query(raw_query)?;
    let filter = AnswerQuery { subject: params.subject, from: params.from, to: params.to };
    let answers = pds.answers(&question_id, &filter)?;
    caller.touched(answers.iter().map(|a| a.subject.key().to_string()));
    Ok(Json(answers.iter().map(|a| a.served()).collect()))
}

async fn run_compute(State(pds): State<Arc<Pds>>, Extension(caller): Extension<Caller>) -> ApiResult<impl IntoResponse> {
    caller.require_owner()?;
    let report = blocking(move || Ok(pds.run_compute())).await?;
    Ok(Json(report))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AuditParams {
    #[serde(default)]
    since: u64,
}

async fn audit(
    State(pds): State<Arc<Pds>>,
    Extension(caller): Extension<Caller>,
    RawQuery(raw_query): RawQuery,
) -> ApiResult<impl IntoResponse> {
    caller.require_owner()?;
    let params: AuditParams = query(raw_query)?;
    Ok(Json(pds.audit_since(params.since)))
}

// aggregation

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeerSecret {
    pub peer_id: String,
    /// 32 bytes, hex encoded.
    pub secret: String,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContributeRequest {
    participants_hash: Option<String>,
}

async fn add_peer(
    State(pds): State<Arc<Pds>>,
    Extension(caller): Extension<Caller>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<impl IntoResponse> {
    caller.require_owner()?;
    let peer: PeerSecret = json_body(body)?;
    pds.add_peer(&peer.peer_id, &peer.secret)?;
    Ok(Json(BTreeMap::from([("peer_id", peer.peer_id)])))
}

async fn open_session(
    State(pds): State<Arc<Pds>>,
    Extension(caller): Extension<Caller>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<impl IntoResponse> {
    caller.require_participation()?;
    let request: OpenSession = json_body(body)?;
    Ok(Json(pds.open_session(request)?))
}

async fn contribute(
    State(pds): State<Arc<Pds>>,
    Extension(caller): Extension<Caller>,
    Path(session_id): Path<String>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<impl IntoResponse> {
    caller.require_participation()?;
    let bytes = body_bytes(body)?;
    let request: ContributeRequest = if bytes.iter().all(u8::is_ascii_whitespace) {
        ContributeRequest::default()
    } else {
        serde_json::from_slice(&bytes).map_err(|e| ApiError::new(ErrorCode::InvalidRequest, format!("bad JSON body: {e}")))?
    };
    Ok(Json(pds.contribute(&session_id, request.participants_hash.as_deref())?))
}

async fn not_found() -> ApiError {
    ApiError::new(ErrorCode::NotFound, "no such endpoint")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(ErrorCode::MethodNotAllowed, "method not allowed on this endpoint")
}

/// The full API, wrapped in the audit middleware.
pub fn router(pds: Arc<Pds>) -> Router {
    let mut app = Router::new()
        .route("/v1/recordings", post(upload).get(list_recordings).delete(delete_recordings))
        .route("/v1/recordings/export", get(export))
        .route("/v1/recordings/{id}/raw", get(raw))
        .route("/v1/grants", post(request_grant).get(list_grants))
        .route("/v1/grants/{id}", delete(revoke_grant))
        .route("/v1/grants/{id}/decision", post(decide_grant))
        .route("/v1/questions", get(list_questions).post(install_question))
        .route("/v1/answers/{question_id}", get(answers))
        .route("/v1/compute/run", post(run_compute))
        .route("/v1/audit", get(audit))
        .route("/v1/aggregate/peers", post(add_peer))
        .route("/v1/aggregate/sessions", post(open_session))
        .route("/v1/aggregate/sessions/{id}/contribute", post(contribute))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed);
    if let Some(dir) = &pds.config().console_dir {
        app = app.nest_service("/console", ServeDir::new(dir));
    }
    app.layer(middleware::from_fn_with_state(pds.clone(), audit_layer))
        .layer(DefaultBodyLimit::max(pds.config().max_upload_bytes))
        .with_state(pds)
}
