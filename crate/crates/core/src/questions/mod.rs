//! Installable questions and their answers.
//!
//! A [`Question`] selects one built-in computation (its output schema) and
//! parameterizes it. The [`QuestionEngine`] keeps the registry, runs due jobs
//! in dependency order and stores the resulting [`Answer`]s, which are the
//! only objects ever served to third parties.

mod catalog;
mod engine;
mod places;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::recording::{GeoPoint, RecordingId};

pub use catalog::{count_numeric, validate_payload, OutputSchema, MAX_PAYLOAD_VALUES};
pub use engine::{ComputationJob, JobState, QuestionEngine};
pub use places::{compute_drowsy_places, DrowsyPlaces, PlaceCluster, DROWSY_PLACES_DEFAULT_K};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuestionError {
    #[error("dependency cycle: {0}")]
    DependencyCycle(String),
    #[error("unknown output schema {0}")]
    UnknownSchema(String),
    #[error("unknown dependency {0}")]
    UnknownDependency(String),
    #[error("invalid question: {0}")]
    InvalidParams(String),
    #[error("unknown question {0}")]
    UnknownQuestion(String),
    #[error("no input answer carries a location")]
    NoLocatedAnswers,
    #[error("payload rejected: {0}")]
    InvalidPayload(String),
    #[error("storage error: {0}")]
    Storage(String),
}

/// One input of a question: raw recordings, or another question's answers.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QuestionInput {
    Raw,
    Answer(String),
}

impl fmt::Display for QuestionInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuestionInput::Raw => f.write_str("RAW"),
            QuestionInput::Answer(id) => f.write_str(id),
        }
    }
}

impl FromStr for QuestionInput {
    type Err = QuestionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "RAW" {
            Ok(QuestionInput::Raw)
        } else {
            check_question_id(s)?;
            Ok(QuestionInput::Answer(s.to_string()))
        }
    }
}

impl Serialize for QuestionInput {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QuestionInput {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Question ids appear in URLs and file names: ASCII letters, digits, `_`,
/// `-` and `.`, at most 64 characters. `RAW` is reserved.
pub fn check_question_id(id: &str) -> Result<(), QuestionError> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && id != "RAW"
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'));
    if ok {
        Ok(())
    } else {
        Err(QuestionError::InvalidParams(format!("invalid question id {id:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub question_id: String,
    /// Assigned by the engine on install; ignored on input.
    #[serde(default)]
    pub version: u32,
    pub inputs: BTreeSet<QuestionInput>,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    pub output_schema_id: String,
    pub schedule_period_seconds: u64,
    pub required_scope: String,
}

impl Question {
    /// A question over raw recordings with scope `q:<question_id>`.
    pub fn raw(question_id: &str, schema: OutputSchema) -> Self {
        Question {
            question_id: question_id.to_string(),
            version: 0,
            inputs: BTreeSet::from([QuestionInput::Raw]),
            params: BTreeMap::new(),
            output_schema_id: schema.id().to_string(),
            schedule_period_seconds: 3600,
            required_scope: format!("q:{question_id}"),
        }
    }

    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    pub fn depends_on(mut self, question_id: &str) -> Self {
        self.inputs.insert(QuestionInput::Answer(question_id.to_string()));
        self
    }

    pub fn without_raw(mut self) -> Self {
        self.inputs.remove(&QuestionInput::Raw);
        self
    }

    pub fn every(mut self, seconds: u64) -> Self {
        self.schedule_period_seconds = seconds;
        self
    }

    pub fn scope(mut self, scope: &str) -> Self {
        self.required_scope = scope.to_string();
        self
    }

    pub fn dependencies(&self) -> impl Iterator<Item = &str> {
        self.inputs.iter().filter_map(|i| match i {
            QuestionInput::Answer(id) => Some(id.as_str()),
            QuestionInput::Raw => None,
        })
    }

    pub fn schema(&self) -> Result<OutputSchema, QuestionError> {
        self.output_schema_id.parse()
    }

    /// Equal apart from the version number.
    pub fn same_definition(&self, other: &Question) -> bool {
        self.question_id == other.question_id
            && self.inputs == other.inputs
            && self.params == other.params
            && self.output_schema_id == other.output_schema_id
            && self.schedule_period_seconds == other.schedule_period_seconds
            && self.required_scope == other.required_scope
    }
}

/// What an answer is about.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Subject {
    Recording {
        recording_id: RecordingId,
        start: DateTime<Utc>,
        end: DateTime<Utc>,
    },
    Window { start: DateTime<Utc>, end: DateTime<Utc> },
}

impl Subject {
    /// Store key: the recording id, or `window` for aggregate questions.
    pub fn key(&self) -> &str {
        match self {
            Subject::Recording { recording_id, .. } => recording_id.as_str(),
            Subject::Window { .. } => "window",
        }
    }

    pub fn start(&self) -> DateTime<Utc> {
        match self {
            Subject::Recording { start, .. } | Subject::Window { start, .. } => *start,
        }
    }

    pub fn end(&self) -> DateTime<Utc> {
        match self {
            Subject::Recording { end, .. } | Subject::Window { end, .. } => *end,
        }
    }

    pub fn recording_id(&self) -> Option<&RecordingId> {
        match self {
            Subject::Recording { recording_id, .. } => Some(recording_id),
            Subject::Window { .. } => None,
        }
    }
}

/// A stored answer. `sources` and `location` are bookkeeping for deletion
/// cascades and place aggregation; [`Answer::served`] drops them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub answer_id: String,
    pub question_id: String,
    pub version: u32,
    pub subject: Subject,
    pub payload: Value,
    pub computed_at: DateTime<Utc>,
    #[serde(default)]
    pub sources: Vec<RecordingId>,
    #[serde(default)]
    pub location: Option<GeoPoint>,
}

/// The externally visible form of an answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServedAnswer {
    pub answer_id: String,
    pub question_id: String,
    pub version: u32,
    pub subject: Subject,
    pub payload: Value,
    pub computed_at: DateTime<Utc>,
}

impl Answer {
    pub fn new(
        question: &Question,
        subject: Subject,
        payload: Value,
        computed_at: DateTime<Utc>,
        sources: Vec<RecordingId>,
        location: Option<GeoPoint>,
    ) -> Self {
        let answer_id = answer_id(&question.question_id, question.version, subject.key(), &payload);
        Answer {
            answer_id,
            question_id: question.question_id.clone(),
            version: question.version,
            subject,
            payload,
            computed_at,
            sources,
            location,
        }
    }

    pub fn served(&self) -> ServedAnswer {
        ServedAnswer {
            answer_id: self.answer_id.clone(),
            question_id: self.question_id.clone(),
            version: self.version,
            subject: self.subject.clone(),
            payload: self.payload.clone(),
            computed_at: self.computed_at,
        }
    }
}

/// Content hash over (question, version, subject, payload), so recomputing an
/// unchanged answer yields the same id.
pub fn answer_id(question_id: &str, version: u32, subject_key: &str, payload: &Value) -> String {
    let mut h = Sha256::new();
    for part in [question_id.as_bytes(), &version.to_le_bytes(), subject_key.as_bytes()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    h.update(payload.to_string().as_bytes());
    hex::encode(&h.finalize()[..16])
}

/// Filter for [`QuestionEngine::get_answers`]. Time bounds are inclusive and
/// match any answer whose subject interval overlaps them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnswerQuery {
    pub subject: Option<String>,
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
}

impl AnswerQuery {
    pub fn matches(&self, answer: &Answer) -> bool {
        self.subject.as_deref().is_none_or(|s| answer.subject.key() == s)
            && self.from.is_none_or(|from| answer.subject.end() >= from)
            && self.to.is_none_or(|to| answer.subject.start() <= to)
    }
}
