//! Recording storage: the parsed recording plus the exact uploaded bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use npds_core::recording::{parse_recording, EegRecording, RecordingError, RecordingId};

/// Writes `bytes` to `path` via a synced temporary file and a rename, so a
/// crash leaves either the old or the new content.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

#[derive(Debug, Clone)]
pub struct StoredRecording {
    pub recording: Arc<EegRecording>,
    pub bytes: Arc<Vec<u8>>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Bad(#[from] RecordingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Default)]
pub struct RecordingStore {
    dir: Option<PathBuf>,
    recordings: BTreeMap<RecordingId, StoredRecording>,
}

impl RecordingStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads every `<id>.npds` file in `dir`, discarding leftover temporaries.
    pub fn open(dir: PathBuf) -> Result<Self, StoreError> {
        fs::create_dir_all(&dir)?;
        let mut recordings = BTreeMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            match path.extension().and_then(|e| e.to_str()) {
                Some("npds") => {
                    let bytes = fs::read(&path)?;
                    let recording = parse_recording(&bytes)?;
                    recordings.insert(
                        recording.id().clone(),
                        StoredRecording { recording: Arc::new(recording), bytes: Arc::new(bytes) },
                    );
                }
                Some("tmp") => fs::remove_file(&path)?,
                _ => {}
            }
        }
        Ok(RecordingStore { dir: Some(dir), recordings })
    }

    /// Parses and stores an upload. Nothing is kept when parsing fails.
    /// Returns the id and whether it was new.
    pub fn insert(&mut self, bytes: Vec<u8>) -> Result<(RecordingId, bool), StoreError> {
        let recording = parse_recording(&bytes)?;
        let id = recording.id().clone();
        if self.recordings.contains_key(&id) {
            return Ok((id, false));
        }
        if let Some(dir) = &self.dir {
            atomic_write(&dir.join(format!("{id}.npds")), &bytes)?;
        }
        self.recordings
            .insert(id.clone(), StoredRecording { recording: Arc::new(recording), bytes: Arc::new(bytes) });
        Ok((id, true))
    }

    pub fn get(&self, id: &RecordingId) -> Option<&StoredRecording> {
        self.recordings.get(id)
    }

    pub fn contains(&self, id: &RecordingId) -> bool {
        self.recordings.contains_key(id)
    }

    pub fn ids(&self) -> Vec<RecordingId> {
        self.recordings.keys().cloned().collect()
    }

    /// Recordings ordered by start time, then id.
    pub fn ordered(&self) -> Vec<StoredRecording> {
        let mut all: Vec<StoredRecording> = self.recordings.values().cloned().collect();
        all.sort_by(|a, b| {
            a.recording
                .start_time()
                .cmp(&b.recording.start_time())
                .then_with(|| a.recording.id().cmp(b.recording.id()))
        });
        all
    }

    pub fn recordings(&self) -> Vec<Arc<EegRecording>> {
        self.recordings.values().map(|s| s.recording.clone()).collect()
    }

    pub fn remove(&mut self, id: &RecordingId) -> Result<bool, StoreError> {
        if self.recordings.remove(id).is_none() {
            return Ok(false);
        }
        if let Some(dir) = &self.dir {
            match fs::remove_file(dir.join(format!("{id}.npds"))) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(true)
    }

    pub fn len(&self) -> usize {
        self.recordings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recordings.is_empty()
    }
}
