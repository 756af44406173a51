//! Append-only access log with rule-based anomaly flags.
//!
//! Flags are a pure function of the log prefix: replaying the entries
//! through a fresh [`AnomalyTracker`] reproduces them exactly.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use crate::error::ErrorCode;

/// More than this many requests by one client inside the window is flagged.
pub const RATE_LIMIT: usize = 60;
pub const RATE_WINDOW_SECONDS: i64 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Allowed,
    Denied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnomalyFlag {
    RateExceeded,
    FirstScopeUse,
    Denied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    pub client_id: String,
    pub endpoint: String,
    pub scope_used: Option<String>,
    pub subject_ids: Vec<String>,
    pub outcome: Outcome,
    pub error: Option<ErrorCode>,
    pub anomaly_flags: BTreeSet<AnomalyFlag>,
}

/// What a request contributes to its audit entry; the log adds sequence
/// number, timestamp and flags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditDraft {
    pub client_id: String,
    pub endpoint: String,
    pub scope_used: Option<String>,
    pub subject_ids: Vec<String>,
    pub error: Option<ErrorCode>,
}

#[derive(Debug, Default, Clone)]
pub struct AnomalyTracker {
    recent: HashMap<String, VecDeque<DateTime<Utc>>>,
    seen: BTreeSet<(String, String)>,
}

impl AnomalyTracker {
    /// Flags for the next entry, updating the tracker's state.
    pub fn observe(
        &mut self,
        client_id: &str,
        scope: Option<&str>,
        timestamp: DateTime<Utc>,
        outcome: Outcome,
    ) -> BTreeSet<AnomalyFlag> {
        let mut flags = BTreeSet::new();
        let window = self.recent.entry(client_id.to_string()).or_default();
        window.push_back(timestamp);
        let horizon = timestamp - TimeDelta::seconds(RATE_WINDOW_SECONDS);
        while window.front().is_some_and(|&t| t <= horizon) {
            window.pop_front();
        }
        if window.len() > RATE_LIMIT {
            flags.insert(AnomalyFlag::RateExceeded);
        }
        if self.seen.insert((client_id.to_string(), scope.unwrap_or("").to_string())) {
            flags.insert(AnomalyFlag::FirstScopeUse);
        }
        if outcome == Outcome::Denied {
            flags.insert(AnomalyFlag::Denied);
        }
        flags
    }
}

/// Recomputes the flags of a log from scratch.
pub fn flag_anomalies(entries: &[AuditEntry]) -> Vec<BTreeSet<AnomalyFlag>> {
    let mut tracker = AnomalyTracker::default();
    entries
        .iter()
        .map(|e| tracker.observe(&e.client_id, e.scope_used.as_deref(), e.timestamp, e.outcome))
        .collect()
}

#[derive(Debug, Default)]
pub struct AuditLog {
    entries: Vec<AuditEntry>,
    tracker: AnomalyTracker,
    file: Option<File>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens a JSON-lines log, replaying existing entries. A torn final
    /// line (crash mid-append) is dropped.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut log = AuditLog::default();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            let mut valid_len = 0u64;
            for line in reader.lines() {
                let line = line?;
                let Ok(entry) = serde_json::from_str::<AuditEntry>(&line) else { break };
                log.tracker.observe(&entry.client_id, entry.scope_used.as_deref(), entry.timestamp, entry.outcome);
                log.entries.push(entry);
                valid_len += line.len() as u64 + 1;
            }
            OpenOptions::new().write(true).open(path)?.set_len(valid_len)?;
        }
        log.file = Some(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(log)
    }

    pub fn append(&mut self, draft: AuditDraft, timestamp: DateTime<Utc>) -> std::io::Result<AuditEntry> {
        let outcome = if draft.error.is_some() { Outcome::Denied } else { Outcome::Allowed };
        let anomaly_flags = self.tracker.observe(&draft.client_id, draft.scope_used.as_deref(), timestamp, outcome);
        let entry = AuditEntry {
            seq: self.entries.len() as u64 + 1,
            timestamp,
            client_id: draft.client_id,
            endpoint: draft.endpoint,
            scope_used: draft.scope_used,
            subject_ids: draft.subject_ids,
            outcome,
            error: draft.error,
            anomaly_flags,
        };
        if let Some(file) = &mut self.file {
            let mut line = serde_json::to_vec(&entry).map_err(std::io::Error::other)?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.flush()?;
        }
        self.entries.push(entry.clone());
        Ok(entry)
    }

    /// Entries with `seq > since`.
    pub fn since(&self, since: u64) -> Vec<AuditEntry> {
        self.entries.iter().skip(since.min(self.entries.len() as u64) as usize).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
