//! Question registry, sweep scheduler and answer store.
//!
//! With a directory attached, every answer is written to its own file by
//! write-then-rename before it becomes visible, so an interrupted sweep
//! leaves only complete answers behind and a rerun converges to the same set.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeDelta, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::catalog::{check_question, compute_for_recording, Computation};
use super::places::compute_drowsy_places;
use super::{validate_payload, Answer, AnswerQuery, OutputSchema, Question, QuestionError, Subject};
use crate::recording::{EegRecording, GeoPoint, RecordingId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobState {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputationJob {
    pub question_id: String,
    pub version: u32,
    pub subject: Subject,
    pub state: JobState,
    /// 1 for a first attempt, counting up while the job keeps failing.
    pub attempt: u32,
    pub error: Option<String>,
}

/// (question_id, version, subject key)
type Key = (String, u32, String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunRecord {
    question_id: String,
    version: u32,
    subject: String,
    last_attempt: DateTime<Utc>,
    failures: u32,
    error: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Registry {
    current: BTreeMap<String, Question>,
    /// Every installed version, oldest first.
    history: Vec<Question>,
}

pub struct QuestionEngine {
    dir: Option<PathBuf>,
    registry: RwLock<Registry>,
    answers: RwLock<BTreeMap<Key, Answer>>,
    runs: Mutex<BTreeMap<Key, RunRecord>>,
    sweep: Mutex<()>,
}

fn storage(e: impl std::fmt::Display) -> QuestionError {
    QuestionError::Storage(e.to_string())
}

/// Write to a sibling temporary file, sync, then rename over the target.
pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp)?;
    file.write_all(bytes)?;
    file.sync_all()?;
    fs::rename(&tmp, path)
}

fn key_of(answer: &Answer) -> Key {
    (answer.question_id.clone(), answer.version, answer.subject.key().to_string())
}

fn answer_file(dir: &Path, key: &Key) -> PathBuf {
    let mut h = Sha256::new();
    h.update(format!("{}\n{}\n{}", key.0, key.1, key.2));
    dir.join("answers").join(format!("{}.json", hex::encode(&h.finalize()[..16])))
}

/// What a finished computation hands back to the store.
struct Output {
    payload: Value,
    sources: Vec<RecordingId>,
    location: Option<GeoPoint>,
}

impl Default for QuestionEngine {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl QuestionEngine {
    pub fn in_memory() -> Self {
        QuestionEngine {
            dir: None,
            registry: RwLock::new(Registry::default()),
            answers: RwLock::new(BTreeMap::new()),
            runs: Mutex::new(BTreeMap::new()),
            sweep: Mutex::new(()),
        }
    }

    /// Opens (or creates) a persistent engine rooted at `dir`.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, QuestionError> {
        let dir = dir.into();
        fs::create_dir_all(dir.join("answers")).map_err(storage)?;
        let registry = match fs::read(dir.join("questions.json")) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(storage)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Registry::default(),
            Err(e) => return Err(storage(e)),
        };
        let runs: Vec<RunRecord> = match fs::read(dir.join("runs.json")) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(storage)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(storage(e)),
        };
        let mut answers = BTreeMap::new();
        for entry in fs::read_dir(dir.join("answers")).map_err(storage)? {
            let path = entry.map_err(storage)?.path();
            match path.extension().and_then(|e| e.to_str()) {
                Some("json") => {
                    let answer: Answer = serde_json::from_slice(&fs::read(&path).map_err(storage)?).map_err(storage)?;
                    answers.insert(key_of(&answer), answer);
                }
                // leftovers of an interrupted write
                Some("tmp") => fs::remove_file(&path).map_err(storage)?,
                _ => {}
            }
        }
        Ok(QuestionEngine {
            dir: Some(dir),
            registry: RwLock::new(registry),
            answers: RwLock::new(answers),
            runs: Mutex::new(
                runs.into_iter().map(|r| ((r.question_id.clone(), r.version, r.subject.clone()), r)).collect(),
            ),
            sweep: Mutex::new(()),
        })
    }

    fn save_registry(&self, registry: &Registry) -> Result<(), QuestionError> {
        if let Some(dir) = &self.dir {
            let bytes = serde_json::to_vec_pretty(registry).map_err(storage)?;
            atomic_write(&dir.join("questions.json"), &bytes).map_err(storage)?;
        }
        Ok(())
    }

    fn save_runs(&self, runs: &BTreeMap<Key, RunRecord>) -> Result<(), QuestionError> {
        if let Some(dir) = &self.dir {
            let list: Vec<&RunRecord> = runs.values().collect();
            atomic_write(&dir.join("runs.json"), &serde_json::to_vec(&list).map_err(storage)?).map_err(storage)?;
        }
        Ok(())
    }

    /// Installs or updates a question. The version is 1 for a new id, bumps
    /// on any change of definition and is left alone on an identical
    /// reinstall.
    pub fn install_question(&self, mut question: Question) -> Result<Question, QuestionError> {
        check_question(&question)?;
        let mut registry = self.registry.write();
        let id = question.question_id.clone();
        for dep in question.dependencies() {
            if dep == id {
                return Err(QuestionError::DependencyCycle(format!("{id} -> {id}")));
            }
            let Some(installed) = registry.current.get(dep) else {
                return Err(QuestionError::UnknownDependency(dep.to_string()));
            };
            if question.schema()?.is_aggregate() && installed.output_schema_id != OutputSchema::Drowsiness.id() {
                return Err(QuestionError::InvalidParams(format!(
                    "{} aggregates drowsiness answers, {dep} produces {}",
                    question.output_schema_id, installed.output_schema_id
                )));
            }
        }
        if let Some(path) = find_cycle(&registry.current, &question) {
            return Err(QuestionError::DependencyCycle(path.join(" -> ")));
        }
        question.version = match registry.current.get(&id) {
            Some(old) if old.same_definition(&question) => return Ok(old.clone()),
            Some(old) => old.version + 1,
            None => 1,
        };
        registry.current.insert(id, question.clone());
        registry.history.push(question.clone());
        self.save_registry(&registry)?;
        Ok(question)
    }

    pub fn questions(&self) -> Vec<Question> {
        self.registry.read().current.values().cloned().collect()
    }

    pub fn question(&self, question_id: &str) -> Option<Question> {
        self.registry.read().current.get(question_id).cloned()
    }

    /// All installed versions of a question, oldest first.
    pub fn question_history(&self, question_id: &str) -> Vec<Question> {
        self.registry.read().history.iter().filter(|q| q.question_id == question_id).cloned().collect()
    }

    /// Current questions in dependency order, ties broken by id.
    pub fn topological_order(&self) -> Vec<Question> {
        let registry = self.registry.read();
        let mut indegree: BTreeMap<&str, usize> =
            registry.current.values().map(|q| (q.question_id.as_str(), q.dependencies().count())).collect();
        let mut ready: BTreeSet<&str> = indegree.iter().filter(|(_, &d)| d == 0).map(|(&id, _)| id).collect();
        let mut order = Vec::with_capacity(indegree.len());
        while let Some(id) = ready.pop_first() {
            order.push(registry.current[id].clone());
            for q in registry.current.values() {
                if q.dependencies().any(|d| d == id) {
                    let d = indegree.get_mut(q.question_id.as_str()).expect("registered");
                    *d -= 1;
                    if *d == 0 {
                        ready.insert(&q.question_id);
                    }
                }
            }
        }
        order
    }

    /// Computes every due (question, subject) pair. See
    /// [`run_due_jobs_with_budget`](Self::run_due_jobs_with_budget).
    pub fn run_due_jobs<R: Borrow<EegRecording>>(&self, now: DateTime<Utc>, recordings: &[R]) -> Vec<ComputationJob> {
        self.run_due_jobs_with_budget(now, recordings, usize::MAX)
    }

    /// Runs at most `max_jobs` due jobs in dependency order. A pair is due
    /// when it never ran, its schedule period has elapsed since the last
    /// attempt, or a dependency answer is newer than that attempt. Failures
    /// are recorded on the returned job and retried later; they never stop
    /// the sweep.
    pub fn run_due_jobs_with_budget<R: Borrow<EegRecording>>(
        &self,
        now: DateTime<Utc>,
        recordings: &[R],
        max_jobs: usize,
    ) -> Vec<ComputationJob> {
        let _sweep = self.sweep.lock();
        let mut recs: Vec<&EegRecording> = recordings.iter().map(Borrow::borrow).collect();
        recs.sort_by(|a, b| a.start_time().cmp(&b.start_time()).then_with(|| a.id().cmp(b.id())));
        let mut jobs = Vec::new();
        'questions: for question in self.topological_order() {
            let Ok(computation) = Computation::parse(&question) else { continue };
            let deps: Vec<Question> = question.dependencies().filter_map(|d| self.question(d)).collect();
            if let Computation::DrowsyPlaces { k } = computation {
                let inputs: Vec<Answer> = deps.iter().flat_map(|d| self.current_answers(d)).collect();
                if inputs.is_empty() {
                    continue;
                }
                let newest = inputs.iter().map(|a| a.computed_at).max();
                let key = (question.question_id.clone(), question.version, "window".to_string());
                if !self.is_due(&key, &question, now, newest) {
                    continue;
                }
                if jobs.len() >= max_jobs {
                    break 'questions;
                }
                let subject = Subject::Window {
                    start: inputs.iter().map(|a| a.subject.start()).min().expect("non-empty"),
                    end: inputs.iter().map(|a| a.subject.end()).max().expect("non-empty"),
                };
                let result = compute_drowsy_places(&inputs, k)
                    .map(|places| {
                        let mut sources: Vec<RecordingId> = inputs
                            .iter()
                            .filter(|a| a.location.is_some())
                            .flat_map(|a| a.sources.iter().cloned())
                            .collect();
                        sources.sort();
                        sources.dedup();
                        Output {
                            payload: serde_json::to_value(places).expect("serializable"),
                            sources,
                            location: None,
                        }
                    })
                    .map_err(|e| e.to_string());
                jobs.push(self.finish(&question, subject, result, now));
                continue;
            }
            for rec in &recs {
                let key = (question.question_id.clone(), question.version, rec.id().to_string());
                let newest = deps
                    .iter()
                    .filter_map(|d| self.answers.read().get(&(d.question_id.clone(), d.version, key.2.clone())).map(|a| a.computed_at))
                    .max();
                if !self.is_due(&key, &question, now, newest) {
                    continue;
                }
                if jobs.len() >= max_jobs {
                    break 'questions;
                }
                let subject = Subject::Recording {
                    recording_id: rec.id().clone(),
                    start: rec.start_time(),
                    end: rec.end_time(),
                };
                let result = compute_for_recording(&computation, rec)
                    .map(|payload| Output {
                        payload,
                        sources: vec![rec.id().clone()],
                        location: rec.metadata().location,
                    })
                    .map_err(|e| e.to_string());
                jobs.push(self.finish(&question, subject, result, now));
            }
        }
        if let Err(e) = self.save_runs(&self.runs.lock()) {
            // answers are already durable; a lost run log only causes recomputation
            eprintln!("warning: could not persist run log: {e}");
        }
        jobs
    }

    fn is_due(&self, key: &Key, question: &Question, now: DateTime<Utc>, newest_input: Option<DateTime<Utc>>) -> bool {
        let runs = self.runs.lock();
        let Some(record) = runs.get(key) else { return true };
        let period = TimeDelta::seconds(question.schedule_period_seconds.min(i64::MAX as u64 / 1000) as i64);
        now >= record.last_attempt + period || newest_input.is_some_and(|t| t > record.last_attempt)
    }

    fn finish(
        &self,
        question: &Question,
        subject: Subject,
        result: Result<Output, String>,
        now: DateTime<Utc>,
    ) -> ComputationJob {
        let key = (question.question_id.clone(), question.version, subject.key().to_string());
        let stored = result.and_then(|out| {
            let schema = question.schema().map_err(|e| e.to_string())?;
            validate_payload(schema, &out.payload).map_err(|e| e.to_string())?;
            self.store(question, subject.clone(), out, now).map_err(|e| e.to_string())
        });
        let mut runs = self.runs.lock();
        let failures = runs.get(&key).map_or(0, |r| r.failures);
        let (state, attempt, error, failures) = match stored {
            Ok(()) => (JobState::Done, failures + 1, None, 0),
            Err(e) => (JobState::Failed, failures + 1, Some(e), failures + 1),
        };
        runs.insert(
            key.clone(),
            RunRecord {
                question_id: key.0,
                version: key.1,
                subject: key.2,
                last_attempt: now,
                failures,
                error: error.clone(),
            },
        );
        ComputationJob {
            question_id: question.question_id.clone(),
            version: question.version,
            subject,
            state,
            attempt,
            error,
        }
    }

    /// Persists and publishes an answer unless an identical one is stored.
    fn store(&self, question: &Question, subject: Subject, out: Output, now: DateTime<Utc>) -> Result<(), QuestionError> {
        let key = (question.question_id.clone(), question.version, subject.key().to_string());
        if let Some(existing) = self.answers.read().get(&key) {
            if existing.payload == out.payload && existing.sources == out.sources && existing.location == out.location {
                return Ok(());
            }
        }
        let answer = Answer::new(question, subject, out.payload, now, out.sources, out.location);
        self.publish(answer)
    }

    fn publish(&self, answer: Answer) -> Result<(), QuestionError> {
        let key = key_of(&answer);
        if let Some(dir) = &self.dir {
            let bytes = serde_json::to_vec_pretty(&answer).map_err(storage)?;
            atomic_write(&answer_file(dir, &key), &bytes).map_err(storage)?;
        }
        self.answers.write().insert(key, answer);
        Ok(())
    }

    fn current_answers(&self, question: &Question) -> Vec<Answer> {
        self.answers
            .read()
            .values()
            .filter(|a| a.question_id == question.question_id && a.version == question.version)
            .cloned()
            .collect()
    }

    /// Answers of the current version of `question_id` matching `query`,
    /// sorted by subject start time.
    pub fn get_answers(&self, question_id: &str, query: &AnswerQuery) -> Result<Vec<Answer>, QuestionError> {
        let question = self.question(question_id).ok_or_else(|| QuestionError::UnknownQuestion(question_id.into()))?;
        let mut answers: Vec<Answer> =
            self.current_answers(&question).into_iter().filter(|a| query.matches(a)).collect();
        answers.sort_by(|a, b| {
            a.subject.start().cmp(&b.subject.start()).then_with(|| a.subject.key().cmp(b.subject.key()))
        });
        Ok(answers)
    }

    /// Every stored answer, all versions included.
    pub fn all_answers(&self) -> Vec<Answer> {
        self.answers.read().values().cloned().collect()
    }

    /// Stores an externally supplied answer for the current version of a
    /// question, after schema validation. Used to import answers.
    pub fn put_answer(
        &self,
        question_id: &str,
        subject: Subject,
        payload: Value,
        computed_at: DateTime<Utc>,
        location: Option<GeoPoint>,
    ) -> Result<Answer, QuestionError> {
        let question = self.question(question_id).ok_or_else(|| QuestionError::UnknownQuestion(question_id.into()))?;
        validate_payload(question.schema()?, &payload)?;
        let sources = subject.recording_id().cloned().into_iter().collect();
        let answer = Answer::new(&question, subject, payload, computed_at, sources, location);
        self.publish(answer.clone())?;
        Ok(answer)
    }

    /// Deletes every answer (all versions) about the given recordings or
    /// derived from them, along with their run records so aggregates are
    /// recomputed from what remains. Returns the number of answers removed.
    pub fn purge_subjects(&self, ids: &[RecordingId]) -> Result<usize, QuestionError> {
        let _sweep = self.sweep.lock();
        let doomed: BTreeSet<&RecordingId> = ids.iter().collect();
        let mut answers = self.answers.write();
        let keys: Vec<Key> = answers
            .iter()
            .filter(|(_, a)| {
                a.subject.recording_id().is_some_and(|id| doomed.contains(id)) || a.sources.iter().any(|s| doomed.contains(s))
            })
            .map(|(k, _)| k.clone())
            .collect();
        let mut runs = self.runs.lock();
        for key in &keys {
            if let Some(dir) = &self.dir {
                match fs::remove_file(answer_file(dir, key)) {
                    Ok(()) => {}
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                    Err(e) => return Err(storage(e)),
                }
            }
            answers.remove(key);
            runs.remove(key);
        }
        runs.retain(|k, _| !doomed.iter().any(|id| id.as_str() == k.2));
        self.save_runs(&runs)?;
        Ok(keys.len())
    }
}

/// Path of a cycle `question` would close, if any.
fn find_cycle(current: &BTreeMap<String, Question>, question: &Question) -> Option<Vec<String>> {
    fn walk<'a>(
        current: &'a BTreeMap<String, Question>,
        replaced: &'a Question,
        at: &'a str,
        path: &mut Vec<String>,
        seen: &mut BTreeSet<&'a str>,
    ) -> bool {
        let node = if at == replaced.question_id { Some(replaced) } else { current.get(at) };
        let Some(node) = node else { return false };
        for dep in node.dependencies() {
            path.push(dep.to_string());
            if dep == replaced.question_id {
                return true;
            }
            if seen.insert(dep) && walk(current, replaced, dep, path, seen) {
                return true;
            }
            path.pop();
        }
        false
    }
    let mut path = vec![question.question_id.clone()];
    walk(current, question, &question.question_id, &mut path, &mut BTreeSet::new()).then_some(path)
}
