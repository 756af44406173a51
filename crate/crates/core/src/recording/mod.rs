//! EEG recording data model.
//!
//! An [`EegRecording`] is the only object holding raw signal. It is immutable
//! once constructed and its identifier is derived from its canonical binary
//! encoding, so two byte-identical uploads map to the same recording.

mod format;
mod metadata;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use format::{parse_recording, parse_recording_prefix, parse_recordings, serialize_recording, MAGIC};
pub use metadata::{decode_lines, encode_lines};
pub use synthetic::{generate_synthetic, ChannelSpec, Component, SyntheticSpec};

/// Errors raised while building, parsing or generating recordings.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordingError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("truncated file: needed {needed} bytes at offset {offset}, {available} available")]
    TruncatedFile {
        offset: usize,
        needed: u64,
        available: usize,
    },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("metadata decode error: {0}")]
    MetadataDecodeError(String),
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("unstable AR model: characteristic root with modulus {modulus:.6} >= 1")]
    UnstableArModel { modulus: f64 },
    #[error("bad synthetic spec: {0}")]
    BadSpec(String),
}

/// Content-derived recording identifier (hex SHA-256 prefix of the file bytes).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecordingId(String);

impl RecordingId {
    pub fn from_bytes(bytes: &[u8]) -> Self {
        let digest = Sha256::digest(bytes);
        RecordingId(hex::encode(&digest[..16]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for RecordingId {
    fn from(s: &str) -> Self {
        RecordingId(s.to_string())
    }
}

impl From<String> for RecordingId {
    fn from(s: String) -> Self {
        RecordingId(s)
    }
}

impl fmt::Display for RecordingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Electrode name, e.g. `F3`, `O2`, `CZ`, or `CH<n>` for unlabeled channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ChannelLabel(String);

impl ChannelLabel {
    pub fn new(name: impl Into<String>) -> Result<Self, RecordingError> {
        let name = name.into();
        if name.is_empty() {
            return Err(RecordingError::InvalidRecording("empty channel label".into()));
        }
        if name.len() > u16::MAX as usize {
            return Err(RecordingError::InvalidRecording("channel label too long".into()));
        }
        Ok(ChannelLabel(name))
    }

    /// Label for the `n`th unlabeled channel (1-based).
    pub fn unlabeled(n: usize) -> Self {
        ChannelLabel(format!("CH{n}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ChannelLabel {
    type Error = RecordingError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        ChannelLabel::new(value)
    }
}

impl TryFrom<&str> for ChannelLabel {
    type Error = RecordingError;

    fn try_from(value: &str) -> Result<Self, Self::Error> {
        ChannelLabel::new(value)
    }
}

impl From<ChannelLabel> for String {
    fn from(label: ChannelLabel) -> Self {
        label.0
    }
}

impl fmt::Display for ChannelLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Latitude/longitude in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, RecordingError> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(RecordingError::InvalidRecording(format!(
                "location ({lat}, {lon}) out of range"
            )));
        }
        Ok(GeoPoint { lat, lon })
    }
}

/// Descriptive metadata carried alongside the samples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordingMetadata {
    pub user_id: String,
    pub description: String,
    pub battery_level_percent: Option<u8>,
    pub location: Option<GeoPoint>,
    /// Free-form keys. Reserved key names are rejected.
    pub extra: BTreeMap<String, String>,
}

impl RecordingMetadata {
    pub fn validate(&self) -> Result<(), RecordingError> {
        if let Some(b) = self.battery_level_percent {
            if b > 100 {
                return Err(RecordingError::InvalidRecording(format!("battery level {b} > 100")));
            }
        }
        if let Some(loc) = self.location {
            GeoPoint::new(loc.lat, loc.lon)?;
        }
        for key in self.extra.keys() {
            metadata::check_extra_key(key).map_err(RecordingError::InvalidRecording)?;
        }
        Ok(())
    }
}

/// Multi-channel raw EEG trace in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecording {
    id: RecordingId,
    channels: Vec<ChannelLabel>,
    sample_rate_hz: f64,
    start_time: DateTime<Utc>,
    samples: Vec<Vec<f32>>,
    metadata: RecordingMetadata,
}

impl EegRecording {
    /// Builds a recording, validating every invariant. `start_time` is
    /// truncated to microsecond resolution.
    pub fn new(
        channels: Vec<ChannelLabel>,
        sample_rate_hz: f64,
        start_time: DateTime<Utc>,
        samples: Vec<Vec<f32>>,
        metadata: RecordingMetadata,
    ) -> Result<Self, RecordingError> {
        let mut rec = Self::unchecked(channels, sample_rate_hz, start_time, samples, metadata)?;
        rec.id = RecordingId::from_bytes(&serialize_recording(&rec));
        Ok(rec)
    }

    /// Validates invariants but leaves the identifier empty.
    pub(crate) fn unchecked(
        channels: Vec<ChannelLabel>,
        sample_rate_hz: f64,
        start_time: DateTime<Utc>,
        samples: Vec<Vec<f32>>,
        metadata: RecordingMetadata,
    ) -> Result<Self, RecordingError> {
        if channels.is_empty() {
            return Err(RecordingError::InvalidRecording("no channels".into()));
        }
        if channels.len() > u16::MAX as usize {
            return Err(RecordingError::InvalidRecording("too many channels".into()));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(RecordingError::InvalidRecording(format!(
                "sample rate {sample_rate_hz} must be positive"
            )));
        }
        if samples.len() != channels.len() {
            return Err(RecordingError::InvalidRecording(format!(
                "{} channel labels but {} sample rows",
                channels.len(),
                samples.len()
            )));
        }
        let n = samples[0].len();
        if n == 0 {
            return Err(RecordingError::InvalidRecording("no samples".into()));
        }
        if samples.iter().any(|row| row.len() != n) {
            return Err(RecordingError::InvalidRecording("ragged channel lengths".into()));
        }
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(RecordingError::InvalidRecording("non-finite sample".into()));
        }
        for (i, a) in channels.iter().enumerate() {
            if channels[..i].contains(a) {
                return Err(RecordingError::InvalidRecording(format!("duplicate channel {a}")));
            }
        }
        metadata.validate()?;
        let start_time = DateTime::from_timestamp_micros(start_time.timestamp_micros())
            .ok_or_else(|| RecordingError::InvalidRecording("start time out of range".into()))?;
        Ok(EegRecording {
            id: RecordingId(String::new()),
            channels,
            sample_rate_hz,
            start_time,
            samples,
            metadata,
        })
    }

    pub(crate) fn with_id(mut self, id: RecordingId) -> Self {
        self.id = id;
        self
    }

    pub fn id(&self) -> &RecordingId {
        &self.id
    }

    pub fn channels(&self) -> &[ChannelLabel] {
        &self.channels
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn start_time(&self) -> DateTime<Utc> {
        self.start_time
    }

    pub fn end_time(&self) -> DateTime<Utc> {
        let micros = (self.duration_seconds() * 1e6).round() as i64;
        self.start_time + TimeDelta::microseconds(micros)
    }

    pub fn metadata(&self) -> &RecordingMetadata {
        &self.metadata
    }

    pub fn sample_count(&self) -> usize {
        self.samples[0].len()
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.sample_count() as f64 / self.sample_rate_hz
    }

    /// All channels, channel-major.
    pub fn samples(&self) -> &[Vec<f32>] {
        &self.samples
    }

    pub fn channel_index(&self, label: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.as_str() == label)
    }

    pub fn channel(&self, label: &str) -> Option<&[f32]> {
        self.channel_index(label).map(|i| self.samples[i].as_slice())
    }

    /// Channel samples widened to `f64` for numerical work.
    pub fn channel_f64(&self, label: &str) -> Option<Vec<f64>> {
        self.channel(label).map(|s| s.iter().map(|&v| v as f64).collect())
    }
}
