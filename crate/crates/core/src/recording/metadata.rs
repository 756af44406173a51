//! `key<TAB>value<LF>` text blocks.
//!
//! Used for the recording metadata block and for synthetic spec files.
//! Values escape backslash, tab and line feed as `\\`, `\t`, `\n`; keys may
//! not contain any of the three.

use super::{GeoPoint, RecordingError, RecordingMetadata};

pub(crate) const RESERVED_KEYS: [&str; 5] = ["user", "description", "battery", "lat", "lon"];

pub(crate) fn check_key(key: &str) -> Result<(), String> {
    if key.is_empty() {
        return Err("empty metadata key".into());
    }
    if key.contains(['\t', '\n', '\\']) {
        return Err(format!("metadata key {key:?} contains a reserved character"));
    }
    Ok(())
}

pub(crate) fn check_extra_key(key: &str) -> Result<(), String> {
    check_key(key)?;
    if RESERVED_KEYS.contains(&key) {
        return Err(format!("metadata key {key:?} is reserved"));
    }
    Ok(())
}

fn escape(value: &str, out: &mut String) {
    for c in value.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
}

fn unescape(value: &str) -> Result<String, String> {
    let mut out = String::with_capacity(value.len());
    let mut chars = value.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            other => return Err(format!("bad escape sequence \\{}", other.map(String::from).unwrap_or_default())),
        }
    }
    Ok(out)
}

/// Encodes ordered pairs as `key<TAB>value<LF>` lines.
pub fn encode_lines<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k);
        out.push('\t');
        escape(v, &mut out);
        out.push('\n');
    }
    out
}

/// Decodes `key<TAB>value<LF>` lines, keeping order and duplicates.
/// Blank lines and lines starting with `#` are skipped.
pub fn decode_lines(text: &str) -> Result<Vec<(String, String)>, RecordingError> {
    let err = |line: usize, msg: String| RecordingError::MetadataDecodeError(format!("line {line}: {msg}"));
    let mut out = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('\t')
            .ok_or_else(|| err(i + 1, "missing TAB separator".into()))?;
        check_key(key).map_err(|m| err(i + 1, m))?;
        out.push((key.to_string(), unescape(value).map_err(|m| err(i + 1, m))?));
    }
    Ok(out)
}

pub(crate) fn encode_metadata(meta: &RecordingMetadata) -> String {
    let battery = meta.battery_level_percent.map(|b| b.to_string());
    let lat = meta.location.map(|l| l.lat.to_string());
    let lon = meta.location.map(|l| l.lon.to_string());
    let mut pairs: Vec<(&str, &str)> = Vec::new();
    if !meta.user_id.is_empty() {
        pairs.push(("user", &meta.user_id));
    }
    if !meta.description.is_empty() {
        pairs.push(("description", &meta.description));
    }
    if let Some(b) = &battery {
        pairs.push(("battery", b));
    }
    if let (Some(lat), Some(lon)) = (&lat, &lon) {
        pairs.push(("lat", lat));
        pairs.push(("lon", lon));
    }
    pairs.extend(meta.extra.iter().map(|(k, v)| (k.as_str(), v.as_str())));
    encode_lines(pairs)
}

pub(crate) fn decode_metadata(block: &[u8]) -> Result<RecordingMetadata, RecordingError> {
    let bad = |m: String| RecordingError::MetadataDecodeError(m);
    let text = std::str::from_utf8(block).map_err(|e| bad(format!("invalid UTF-8: {e}")))?;
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(bad("block does not end with a line feed".into()));
    }
    let mut meta = RecordingMetadata::default();
    let mut lat = None;
    let mut lon = None;
    let mut seen = std::collections::BTreeSet::new();
    for (key, value) in decode_lines(text)? {
        if !seen.insert(key.clone()) {
            return Err(bad(format!("duplicate key {key:?}")));
        }
        match key.as_str() {
            "user" => meta.user_id = value,
            "description" => meta.description = value,
            "battery" => {
                let b: u8 = value.parse().map_err(|_| bad(format!("bad battery level {value:?}")))?;
                if b > 100 {
                    return Err(bad(format!("battery level {b} > 100")));
                }
                meta.battery_level_percent = Some(b);
            }
            "lat" => lat = Some(value.parse::<f64>().map_err(|_| bad(format!("bad latitude {value:?}")))?),
            "lon" => lon = Some(value.parse::<f64>().map_err(|_| bad(format!("bad longitude {value:?}")))?),
            _ => {
                meta.extra.insert(key, value);
            }
        }
    }
    meta.location = match (lat, lon) {
        (None, None) => None,
        (Some(lat), Some(lon)) => Some(GeoPoint::new(lat, lon).map_err(|e| bad(e.to_string()))?),
        _ => return Err(bad("lat and lon must appear together".into())),
    };
    Ok(meta)
}
