//! Binary recording format, version 1. All integers little-endian.
//!
//! ```text
//! magic "NPDSEEG1" | u16 version | u16 channel_count | f64 sample_rate_hz
//! | i64 start_time_micros | u32 metadata_len | metadata (UTF-8 lines)
//! | u64 samples_per_channel
//! | channel_count x ( u16 label_len | label (UTF-8) | samples_per_channel x f32 )
//! ```

use chrono::DateTime;

use super::metadata::{decode_metadata, encode_metadata};
use super::{ChannelLabel, EegRecording, RecordingError, RecordingId};

pub const MAGIC: &[u8; 8] = b"NPDSEEG1";
const FORMAT_VERSION: u16 = 1;

/// Serializes a recording. Output is a pure function of the recording.
pub fn serialize_recording(rec: &EegRecording) -> Vec<u8> {
    let meta = encode_metadata(&rec.metadata);
    let n = rec.sample_count();
    let label_bytes: usize = rec.channels.iter().map(|c| c.as_str().len()).sum();
    let mut out = Vec::with_capacity(40 + meta.len() + rec.channel_count() * (2 + 4 * n) + label_bytes);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(rec.channel_count() as u16).to_le_bytes());
    out.extend_from_slice(&rec.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&rec.start_time.timestamp_micros().to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for (label, row) in rec.channels.iter().zip(&rec.samples) {
        out.extend_from_slice(&(label.as_str().len() as u16).to_le_bytes());
        out.extend_from_slice(label.as_str().as_bytes());
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: u64) -> Result<&'a [u8], RecordingError> {
        let available = self.buf.len() - self.pos;
        if len > available as u64 {
            return Err(RecordingError::TruncatedFile {
                offset: self.pos,
                needed: len,
                available,
            });
        }
        let out = &self.buf[self.pos..self.pos + len as usize];
        self.pos += len as usize;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], RecordingError> {
        Ok(self.take(N as u64)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16, RecordingError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, RecordingError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, RecordingError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn i64(&mut self) -> Result<i64, RecordingError> {
        Ok(i64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, RecordingError> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

/// Parses one recording from the front of `bytes`, returning it together
/// with the number of bytes consumed.
pub fn parse_recording_prefix(bytes: &[u8]) -> Result<(EegRecording, usize), RecordingError> {
    if bytes.len() < MAGIC.len() {
        return Err(if MAGIC.starts_with(bytes) {
            RecordingError::TruncatedFile {
                offset: 0,
                needed: MAGIC.len() as u64,
                available: bytes.len(),
            }
        } else {
            RecordingError::BadMagic
        });
    }
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(RecordingError::BadMagic);
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(RecordingError::InvalidHeader(format!("unsupported format version {version}")));
    }
    let channel_count = r.u16()?;
    if channel_count == 0 {
        return Err(RecordingError::InvalidHeader("zero channels".into()));
    }
    let sample_rate_hz = r.f64()?;
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        return Err(RecordingError::InvalidHeader(format!("non-positive sample rate {sample_rate_hz}")));
    }
    let start_micros = r.i64()?;
    let start_time = DateTime::from_timestamp_micros(start_micros)
        .ok_or_else(|| RecordingError::InvalidHeader(format!("start time {start_micros} out of range")))?;
    let meta_len = r.u32()?;
    let metadata = decode_metadata(r.take(meta_len as u64)?)?;
    let n = r.u64()?;
    if n == 0 {
        return Err(RecordingError::InvalidHeader("zero samples per channel".into()));
    }
    let row_bytes = n
        .checked_mul(4)
        .ok_or_else(|| RecordingError::InvalidHeader("sample count overflow".into()))?;

    let mut channels = Vec::with_capacity(channel_count as usize);
    let mut samples = Vec::with_capacity(channel_count as usize);
    for _ in 0..channel_count {
        let label_len = r.u16()?;
        let label = std::str::from_utf8(r.take(label_len as u64)?)
            .map_err(|e| RecordingError::InvalidHeader(format!("channel label is not UTF-8: {e}")))?;
        channels.push(ChannelLabel::new(label).map_err(|e| RecordingError::InvalidHeader(e.to_string()))?);
        let raw = r.take(row_bytes)?;
        samples.push(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect::<Vec<_>>(),
        );
    }
    let consumed = r.pos;
    let rec = EegRecording::unchecked(channels, sample_rate_hz, start_time, samples, metadata)
        .map_err(|e| match e {
            RecordingError::InvalidRecording(m) => RecordingError::InvalidHeader(m),
            other => other,
        })?
        .with_id(RecordingId::from_bytes(&bytes[..consumed]));
    Ok((rec, consumed))
}

/// Parses exactly one recording; trailing bytes are an error.
pub fn parse_recording(bytes: &[u8]) -> Result<EegRecording, RecordingError> {
    let (rec, consumed) = parse_recording_prefix(bytes)?;
    if consumed != bytes.len() {
        return Err(RecordingError::InvalidHeader(format!(
            "{} trailing bytes after recording",
            bytes.len() - consumed
        )));
    }
    Ok(rec)
}

/// Parses a concatenation of recordings, as produced by an owner export.
pub fn parse_recordings(mut bytes: &[u8]) -> Result<Vec<EegRecording>, RecordingError> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (rec, consumed) = parse_recording_prefix(bytes)?;
        out.push(rec);
        bytes = &bytes[consumed..];
    }
    Ok(out)
}
