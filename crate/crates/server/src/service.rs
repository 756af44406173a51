//! The store's state and every operation the HTTP layer exposes, minus
//! transport concerns. Authorization decisions live in [`crate::http`].

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::{DateTime, TimeDelta, Utc};
use npds_core::aggregate::{mask_share, MaskedShare, SessionSpec, K_MIN, SCALE};
use npds_core::questions::{Answer, AnswerQuery, ComputationJob, JobState, Question, QuestionEngine, QuestionError};
use npds_core::recording::RecordingId;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::audit::{AuditDraft, AuditEntry, AuditLog};
use crate::clock::{Clock, SystemClock};
use crate::config::{ConfigError, PdsConfig};
use crate::error::{ApiError, ErrorCode};
use crate::grants::{
    Decision, Grant, GrantStore, TokenAuth, ANONYMOUS_CLIENT, OWNER_CLIENT, RESERVED_SCOPES, SCOPE_OWNER_DELETE,
    SCOPE_OWNER_EXPORT,
};
use crate::store::{atomic_write, RecordingStore, StoreError};

/// Who is calling.
#[derive(Debug, Clone, PartialEq)]
pub enum Identity {
    Anonymous,
    Owner,
    Client(TokenAuth),
}

impl Identity {
    pub fn client_id(&self) -> &str {
        match self {
            Identity::Anonymous => ANONYMOUS_CLIENT,
            Identity::Owner => OWNER_CLIENT,
            Identity::Client(auth) => &auth.client_id,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PdsError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("recording store: {0}")]
    Store(#[from] StoreError),
    #[error("question engine: {0}")]
    Engine(#[from] QuestionError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Owner-facing description of a stored recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingSummary {
    pub recording_id: RecordingId,
    pub start_time: DateTime<Utc>,
    pub end_time: DateTime<Utc>,
    pub channels: Vec<String>,
    pub sample_rate_hz: f64,
    pub sample_count: usize,
    pub size_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadReceipt {
    pub recording_id: RecordingId,
    /// False when an identical file was already stored.
    pub created: bool,
}

/// Body of `DELETE /v1/recordings`: explicit ids, or everything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeleteRequest {
    #[serde(default)]
    pub recording_ids: Vec<RecordingId>,
    #[serde(default)]
    pub all: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeleteReport {
    pub deleted: Vec<RecordingId>,
    pub answers_removed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub jobs: usize,
    pub done: usize,
    pub failed: usize,
    pub details: Vec<ComputationJob>,
}

/// Body of `POST /v1/aggregate/sessions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenSession {
    pub session_id: String,
    pub question_id: String,
    pub field: String,
    pub participants: Vec<String>,
    pub participants_hash: String,
    #[serde(default)]
    pub scale: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub question_id: String,
    pub field: String,
    pub participants: Vec<String>,
    pub participants_hash: String,
    pub participant_id: String,
    pub scale: u64,
}

#[derive(Debug, Clone)]
struct SessionRecord {
    spec: SessionSpec,
    share: Option<MaskedShare>,
}

/// Outcome of writing a request's audit entry.
#[derive(Debug, Clone, PartialEq)]
pub enum Committed {
    Entry(AuditEntry),
    /// The grant was revoked while the request ran; the entry records a denial
    /// and the response must become `Unauthorized`.
    Revoked(AuditEntry),
}

pub struct Pds {
    config: PdsConfig,
    clock: Arc<dyn Clock>,
    owner_digest: [u8; 32],
    recordings: RwLock<RecordingStore>,
    engine: QuestionEngine,
    grants: Mutex<GrantStore>,
    audit: Mutex<AuditLog>,
    peers: RwLock<BTreeMap<String, [u8; 32]>>,
    sessions: Mutex<BTreeMap<String, SessionRecord>>,
    /// Serializes sweeps against deletion.
    compute: Mutex<()>,
}

impl std::fmt::Debug for Pds {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pds").field("node_id", &self.config.node_id).finish_non_exhaustive()
    }
}

fn digest(s: &str) -> [u8; 32] {
    Sha256::digest(s.as_bytes()).into()
}

fn not_owner_scope(scope: &str) -> bool {
    scope != SCOPE_OWNER_EXPORT && scope != SCOPE_OWNER_DELETE
}

/// Follows a dotted path into a payload, e.g. `ratio` or `clusters.0.n`.
fn field_value(payload: &Value, path: &str) -> Option<f64> {
    let mut at = payload;
    for part in path.split('.') {
        at = match at {
            Value::Object(map) => map.get(part)?,
            Value::Array(items) => items.get(part.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    at.as_f64()
}

impl Pds {
    pub fn open(config: PdsConfig) -> Result<Arc<Self>, PdsError> {
        Self::open_with_clock(config, Arc::new(SystemClock))
    }

    pub fn open_with_clock(config: PdsConfig, clock: Arc<dyn Clock>) -> Result<Arc<Self>, PdsError> {
        config.validate()?;
        let (recordings, engine, grants, audit, peers) = match &config.storage_path {
            None => (
                RecordingStore::in_memory(),
                QuestionEngine::in_memory(),
                GrantStore::in_memory(),
                AuditLog::in_memory(),
                BTreeMap::new(),
            ),
            Some(root) => {
                std::fs::create_dir_all(root)?;
                let peers = match std::fs::read(root.join("peers.json")) {
                    Ok(bytes) => {
                        let hexed: BTreeMap<String, String> =
                            serde_json::from_slice(&bytes).map_err(std::io::Error::other)?;
                        hexed
                            .into_iter()
                            .map(|(k, v)| Ok((k, parse_secret(&v).map_err(|e| std::io::Error::other(e.message))?)))
                            .collect::<std::io::Result<_>>()?
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
                    Err(e) => return Err(e.into()),
                };
                (
                    RecordingStore::open(root.join("recordings"))?,
                    QuestionEngine::open(root.join("engine"))?,
                    GrantStore::open(root.join("grants.json"))?,
                    AuditLog::open(&root.join("audit.jsonl"))?,
                    peers,
                )
            }
        };
        Ok(Arc::new(Pds {
            owner_digest: digest(&config.owner_credential),
            config,
            clock,
            recordings: RwLock::new(recordings),
            engine,
            grants: Mutex::new(grants),
            audit: Mutex::new(audit),
            peers: RwLock::new(peers),
            sessions: Mutex::new(BTreeMap::new()),
            compute: Mutex::new(()),
        }))
    }

    pub fn config(&self) -> &PdsConfig {
        &self.config
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn engine(&self) -> &QuestionEngine {
        &self.engine
    }

    /// Resolves a bearer credential. `Err` carries the client id of a
    /// known-but-dead token.
    pub fn identify(&self, bearer: Option<&str>) -> Result<Identity, Option<String>> {
        let Some(bearer) = bearer else { return Ok(Identity::Anonymous) };
        if digest(bearer) == self.owner_digest {
            return Ok(Identity::Owner);
        }
        self.grants.lock().authenticate(bearer, self.now()).map(Identity::Client)
    }

    /// Appends the entry for one finished request. A successful client
    /// request is re-checked against its grant under the grant lock, so
    /// nothing is allowed after a revocation commits.
    pub fn commit_audit(&self, identity: &Identity, mut draft: AuditDraft) -> std::io::Result<Committed> {
        if let (Identity::Client(auth), None) = (identity, draft.error) {
            let grants = self.grants.lock();
            if !grants.is_live(&auth.grant_id, self.now()) {
                draft.error = Some(ErrorCode::Unauthorized);
                draft.subject_ids.clear();
                let mut audit = self.audit.lock();
                let now = self.now();
                return audit.append(draft, now).map(Committed::Revoked);
            }
            let mut audit = self.audit.lock();
            let now = self.now();
            return audit.append(draft, now).map(Committed::Entry);
        }
        let mut audit = self.audit.lock();
        let now = self.now();
        audit.append(draft, now).map(Committed::Entry)
    }

    pub fn audit_since(&self, since: u64) -> Vec<AuditEntry> {
        self.audit.lock().since(since)
    }

    // recordings

    pub fn upload(&self, bytes: Vec<u8>) -> Result<UploadReceipt, ApiError> {
        let (recording_id, created) = self.recordings.write().insert(bytes).map_err(|e| match e {
            StoreError::Bad(e) => ApiError::from(e),
            StoreError::Io(e) => ApiError::internal(e),
        })?;
        Ok(UploadReceipt { recording_id, created })
    }

    pub fn list_recordings(&self) -> Vec<RecordingSummary> {
        self.recordings
            .read()
            .ordered()
            .into_iter()
            .map(|s| {
                let r = &s.recording;
                RecordingSummary {
                    recording_id: r.id().clone(),
                    start_time: r.start_time(),
                    end_time: r.end_time(),
                    channels: r.channels().iter().map(|c| c.to_string()).collect(),
                    sample_rate_hz: r.sample_rate_hz(),
                    sample_count: r.sample_count(),
                    size_bytes: s.bytes.len(),
                }
            })
            .collect()
    }

    /// Every stored file, byte for byte, concatenated in start-time order.
    pub fn export(&self) -> (Vec<RecordingId>, Vec<u8>) {
        let all = self.recordings.read().ordered();
        let ids = all.iter().map(|s| s.recording.id().clone()).collect();
        let mut out = Vec::with_capacity(all.iter().map(|s| s.bytes.len()).sum());
        for s in &all {
            out.extend_from_slice(&s.bytes);
        }
        (ids, out)
    }

    pub fn raw(&self, id: &RecordingId) -> Result<Arc<Vec<u8>>, ApiError> {
        self.recordings
            .read()
            .get(id)
            .map(|s| s.bytes.clone())
            .ok_or_else(|| ApiError::new(ErrorCode::UnknownRecording, format!("no recording {id}")))
    }

    /// Removes recordings and every answer derived from them. All-or-nothing
    /// with respect to unknown ids.
    pub fn delete(&self, request: &DeleteRequest) -> Result<DeleteReport, ApiError> {
        if request.all == !request.recording_ids.is_empty() {
            return Err(ApiError::new(ErrorCode::InvalidRequest, "give either recording_ids or all: true"));
        }
        let _sweep = self.compute.lock();
        let mut store = self.recordings.write();
        let ids: Vec<RecordingId> = if request.all {
            store.ids()
        } else {
            let unique: BTreeSet<RecordingId> = request.recording_ids.iter().cloned().collect();
            if let Some(missing) = unique.iter().find(|id| !store.contains(id)) {
                return Err(ApiError::new(ErrorCode::UnknownRecording, format!("no recording {missing}")));
            }
            unique.into_iter().collect()
        };
        let answers_removed = self.engine.purge_subjects(&ids)?;
        for id in &ids {
            store.remove(id).map_err(ApiError::internal)?;
        }
        for session in self.sessions.lock().values_mut() {
            session.share = None;
        }
        Ok(DeleteReport { deleted: ids, answers_removed })
    }

    // grants

    /// Validates scopes against the reserved set and the installed
    /// questions, then records a pending grant.
    pub fn request_grant(&self, identity: &Identity, client_id: &str, scopes: &[String]) -> Result<Grant, ApiError> {
        let client_id = client_id.trim();
        if client_id.is_empty() || client_id == OWNER_CLIENT || client_id == ANONYMOUS_CLIENT {
            return Err(ApiError::new(ErrorCode::InvalidRequest, format!("client id {client_id:?} not allowed")));
        }
        if scopes.is_empty() {
            return Err(ApiError::new(ErrorCode::InvalidRequest, "no scopes requested"));
        }
        let question_scopes: BTreeSet<String> =
            self.engine.questions().into_iter().map(|q| q.required_scope).collect();
        for scope in scopes {
            if !not_owner_scope(scope) && *identity != Identity::Owner {
                return Err(ApiError::new(ErrorCode::ScopeDenied, format!("{scope} is reserved to the owner")));
            }
            if !RESERVED_SCOPES.contains(&scope.as_str()) && !question_scopes.contains(scope) {
                return Err(ApiError::new(ErrorCode::UnknownScope, format!("unknown scope {scope}")));
            }
        }
        self.grants.lock().request(client_id, scopes.iter().cloned().collect(), self.now())
    }

    pub fn list_grants(&self) -> Vec<Grant> {
        self.grants.lock().list()
    }

    pub fn decide_grant(&self, grant_id: &str, approve: bool) -> Result<Decision, ApiError> {
        let ttl = TimeDelta::seconds(self.config.token_ttl_seconds.min(i64::MAX as u64 / 1000) as i64);
        self.grants.lock().decide(grant_id, approve, self.now(), ttl)
    }

    pub fn revoke_grant(&self, grant_id: &str) -> Result<Grant, ApiError> {
        let mut grants = self.grants.lock();
        let now = self.now();
        grants.revoke(grant_id, now)
    }

    // questions and answers

    pub fn questions(&self) -> Vec<Question> {
        self.engine.topological_order()
    }

    pub fn install_question(&self, question: Question) -> Result<Question, ApiError> {
        if RESERVED_SCOPES.contains(&question.required_scope.as_str()) {
            return Err(ApiError::new(
                ErrorCode::InvalidParams,
                format!("required_scope {} is reserved", question.required_scope),
            ));
        }
        Ok(self.engine.install_question(question)?)
    }

    pub fn question(&self, question_id: &str) -> Result<Question, ApiError> {
        self.engine
            .question(question_id)
            .ok_or_else(|| ApiError::new(ErrorCode::UnknownQuestion, format!("no question {question_id}")))
    }

    pub fn answers(&self, question_id: &str, query: &AnswerQuery) -> Result<Vec<Answer>, ApiError> {
        Ok(self.engine.get_answers(question_id, query)?)
    }

    /// One scheduler sweep over the current recordings.
    pub fn run_compute(&self) -> RunReport {
        let _sweep = self.compute.lock();
        let recordings = self.recordings.read().recordings();
        let details = self.engine.run_due_jobs(self.now(), &recordings);
        let count = |s| details.iter().filter(|j| j.state == s).count();
        RunReport { jobs: details.len(), done: count(JobState::Done), failed: count(JobState::Failed), details }
    }

    // aggregation

    pub fn add_peer(&self, peer_id: &str, secret_hex: &str) -> Result<(), ApiError> {
        if peer_id.is_empty() || peer_id == self.config.node_id {
            return Err(ApiError::new(ErrorCode::InvalidRequest, "peer id must name another participant"));
        }
        let secret = parse_secret(secret_hex)?;
        let mut peers = self.peers.write();
        peers.insert(peer_id.to_string(), secret);
        if let Some(root) = &self.config.storage_path {
            let hexed: BTreeMap<&String, String> = peers.iter().map(|(k, v)| (k, hex::encode(v))).collect();
            let bytes = serde_json::to_vec_pretty(&hexed).map_err(ApiError::internal)?;
            atomic_write(&root.join("peers.json"), &bytes).map_err(ApiError::internal)?;
        }
        Ok(())
    }

    pub fn open_session(&self, request: OpenSession) -> Result<SessionView, ApiError> {
        let scale = request.scale.unwrap_or(SCALE as u64);
        if scale != SCALE as u64 {
            return Err(ApiError::new(ErrorCode::InvalidRequest, format!("scale must be {}", SCALE as u64)));
        }
        let spec = SessionSpec {
            session_id: request.session_id,
            question_id: request.question_id,
            field: request.field,
            participants: request.participants,
        };
        if spec.participants.len() < K_MIN {
            return Err(ApiError::new(
                ErrorCode::MinimumGroupSize,
                format!("{} participants, at least {K_MIN} required", spec.participants.len()),
            ));
        }
        spec.validate()?;
        if spec.participants_hash() != request.participants_hash {
            return Err(ApiError::new(ErrorCode::SessionMismatch, "participants_hash does not match the participant list"));
        }
        if spec.index_of(&self.config.node_id).is_none() {
            return Err(ApiError::new(
                ErrorCode::SessionMismatch,
                format!("{} is not among the participants", self.config.node_id),
            ));
        }
        self.question(&spec.question_id)?;
        let mut sessions = self.sessions.lock();
        match sessions.get(&spec.session_id) {
            Some(existing) if existing.spec != spec => {
                return Err(ApiError::new(ErrorCode::SessionMismatch, "session already open with a different definition"));
            }
            Some(_) => {}
            None => {
                sessions.insert(spec.session_id.clone(), SessionRecord { spec: spec.clone(), share: None });
            }
        }
        Ok(SessionView {
            participants_hash: spec.participants_hash(),
            session_id: spec.session_id,
            question_id: spec.question_id,
            field: spec.field,
            participants: spec.participants,
            participant_id: self.config.node_id.clone(),
            scale,
        })
    }

    /// This store's masked share for a session: the mean of the session's
    /// field over the question's current answers. Repeat calls return the
    /// cached share.
    pub fn contribute(&self, session_id: &str, participants_hash: Option<&str>) -> Result<MaskedShare, ApiError> {
        let mut sessions = self.sessions.lock();
        let record = sessions
            .get_mut(session_id)
            .ok_or_else(|| ApiError::new(ErrorCode::UnknownSession, format!("no session {session_id}")))?;
        if participants_hash.is_some_and(|h| h != record.spec.participants_hash()) {
            return Err(ApiError::new(ErrorCode::SessionMismatch, "participants_hash does not match the session"));
        }
        if let Some(share) = &record.share {
            return Ok(share.clone());
        }
        let spec = &record.spec;
        let values: Vec<f64> = self
            .answers(&spec.question_id, &AnswerQuery::default())?
            .iter()
            .filter_map(|a| field_value(&a.payload, &spec.field))
            .collect();
        if values.is_empty() {
            return Err(ApiError::new(
                ErrorCode::NoSuchAnswer,
                format!("no {} answer with numeric field {}", spec.question_id, spec.field),
            ));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let me = spec.index_of(&self.config.node_id).expect("checked at open");
        let peers = self.peers.read();
        if let Some(missing) = spec.participants.iter().enumerate().find(|&(j, p)| j != me && !peers.contains_key(p)) {
            return Err(ApiError::new(ErrorCode::MissingPeerSecret, format!("no pairwise secret with {}", missing.1)));
        }
        let share = mask_share(spec, me, mean, |j| peers.get(&spec.participants[j]).copied())?;
        record.share = Some(share.clone());
        Ok(share)
    }
}

fn parse_secret(secret_hex: &str) -> Result<[u8; 32], ApiError> {
    let bytes = hex::decode(secret_hex)
        .map_err(|e| ApiError::new(ErrorCode::InvalidRequest, format!("secret is not hex: {e}")))?;
    bytes
        .try_into()
        .map_err(|_| ApiError::new(ErrorCode::InvalidRequest, "secret must be 32 bytes (64 hex characters)"))
}
