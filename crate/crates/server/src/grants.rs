//! Grants, their state machine, and the bearer tokens they issue.
//!
//! Tokens are only ever held as SHA-256 digests; the plaintext is returned
//! once, in the approval response.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use chrono::{DateTime, TimeDelta, Utc};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ApiError, ErrorCode};
use crate::store::atomic_write;

pub const SCOPE_UPLOAD: &str = "upload";
pub const SCOPE_OWNER_EXPORT: &str = "owner:export";
pub const SCOPE_OWNER_DELETE: &str = "owner:delete";
pub const SCOPE_AGGREGATE: &str = "aggregate:participate";
pub const RESERVED_SCOPES: [&str; 4] = [SCOPE_UPLOAD, SCOPE_OWNER_EXPORT, SCOPE_OWNER_DELETE, SCOPE_AGGREGATE];

/// Client ids that audit entries use for callers without a grant.
pub const OWNER_CLIENT: &str = "owner";
pub const ANONYMOUS_CLIENT: &str = "anonymous";

/// Random bytes in an issued token.
pub const TOKEN_BYTES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GrantState {
    Pending,
    Active,
    Revoked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grant {
    pub grant_id: String,
    pub client_id: String,
    pub scopes: BTreeSet<String>,
    pub state: GrantState,
    pub created_at: DateTime<Utc>,
    pub decided_at: Option<DateTime<Utc>>,
    pub revoked_at: Option<DateTime<Utc>>,
    pub expires_at: Option<DateTime<Utc>>,
}

/// Response to an approve/deny decision. `token` is present only on approval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub grant: Grant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expires_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TokenRecord {
    grant_id: String,
    expires_at: DateTime<Utc>,
}

/// A token that authenticated: the grant it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenAuth {
    pub grant_id: String,
    pub client_id: String,
    pub scopes: BTreeSet<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Persisted {
    grants: BTreeMap<String, Grant>,
    tokens: BTreeMap<String, TokenRecord>,
}

#[derive(Debug, Default)]
pub struct GrantStore {
    state: Persisted,
    path: Option<PathBuf>,
}

fn digest(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

impl GrantStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: PathBuf) -> std::io::Result<Self> {
        let state = match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(std::io::Error::other)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Persisted::default(),
            Err(e) => return Err(e),
        };
        Ok(GrantStore { state, path: Some(path) })
    }

    fn save(&self) -> Result<(), ApiError> {
        if let Some(path) = &self.path {
            let bytes = serde_json::to_vec_pretty(&self.state).map_err(ApiError::internal)?;
            atomic_write(path, &bytes).map_err(ApiError::internal)?;
        }
        Ok(())
    }

    /// Records a pending request. Scope validity is the caller's business.
    pub fn request(
        &mut self,
        client_id: &str,
        scopes: BTreeSet<String>,
        now: DateTime<Utc>,
    ) -> Result<Grant, ApiError> {
        let mut raw = [0u8; 8];
        rand::rng().fill_bytes(&mut raw);
        let grant = Grant {
            grant_id: format!("g-{}", hex::encode(raw)),
            client_id: client_id.to_string(),
            scopes,
            state: GrantState::Pending,
            created_at: now,
            decided_at: None,
            revoked_at: None,
            expires_at: None,
        };
        self.state.grants.insert(grant.grant_id.clone(), grant.clone());
        self.save()?;
        Ok(grant)
    }

    pub fn get(&self, grant_id: &str) -> Option<&Grant> {
        self.state.grants.get(grant_id)
    }

    /// All grants, oldest first.
    pub fn list(&self) -> Vec<Grant> {
        let mut grants: Vec<Grant> = self.state.grants.values().cloned().collect();
        grants.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.grant_id.cmp(&b.grant_id)));
        grants
    }

    /// Approving activates the grant and issues its token; denying ends it.
    pub fn decide(
        &mut self,
        grant_id: &str,
        approve: bool,
        now: DateTime<Utc>,
        ttl: TimeDelta,
    ) -> Result<Decision, ApiError> {
        let grant = self
            .state
            .grants
            .get_mut(grant_id)
            .ok_or_else(|| ApiError::new(ErrorCode::UnknownGrant, format!("no grant {grant_id}")))?;
        if grant.state != GrantState::Pending {
            return Err(ApiError::new(ErrorCode::AlreadyDecided, format!("grant {grant_id} is {:?}", grant.state)));
        }
        grant.decided_at = Some(now);
        let decision = if approve {
            let mut raw = [0u8; TOKEN_BYTES];
            rand::rng().fill_bytes(&mut raw);
            let token = hex::encode(raw);
            let expires_at = now + ttl;
            grant.state = GrantState::Active;
            grant.expires_at = Some(expires_at);
            self.state
                .tokens
                .insert(digest(&token), TokenRecord { grant_id: grant_id.to_string(), expires_at });
            Decision { grant: grant.clone(), token: Some(token), expires_at: Some(expires_at) }
        } else {
            grant.state = GrantState::Revoked;
            grant.revoked_at = Some(now);
            Decision { grant: grant.clone(), token: None, expires_at: None }
        };
        self.save()?;
        Ok(decision)
    }

    /// Idempotent: revoking a revoked grant returns it unchanged.
    pub fn revoke(&mut self, grant_id: &str, now: DateTime<Utc>) -> Result<Grant, ApiError> {
        let grant = self
            .state
            .grants
            .get_mut(grant_id)
            .ok_or_else(|| ApiError::new(ErrorCode::UnknownGrant, format!("no grant {grant_id}")))?;
        if grant.state != GrantState::Revoked {
            grant.state = GrantState::Revoked;
            grant.revoked_at = Some(now);
            if grant.decided_at.is_none() {
                grant.decided_at = Some(now);
            }
            let grant = grant.clone();
            self.save()?;
            return Ok(grant);
        }
        Ok(grant.clone())
    }

    /// Resolves a bearer token. On failure, returns the client id of the
    /// token's grant when the token was once valid, for the audit trail.
    pub fn authenticate(&self, token: &str, now: DateTime<Utc>) -> Result<TokenAuth, Option<String>> {
        let hash = digest(token);
        let Some(record) = self.state.tokens.get(&hash) else {
            return Err(None);
        };
        let grant = self.state.grants.get(&record.grant_id).ok_or(None)?;
        if grant.state != GrantState::Active || now >= record.expires_at {
            return Err(Some(grant.client_id.clone()));
        }
        Ok(TokenAuth { grant_id: grant.grant_id.clone(), client_id: grant.client_id.clone(), scopes: grant.scopes.clone() })
    }

    /// Whether the grant would still authenticate at `now`.
    pub fn is_live(&self, grant_id: &str, now: DateTime<Utc>) -> bool {
        self.state
            .grants
            .get(grant_id)
            .is_some_and(|g| g.state == GrantState::Active && g.expires_at.is_some_and(|e| now < e))
    }
}
