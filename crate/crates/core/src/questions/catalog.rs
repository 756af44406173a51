//! Built-in computations selectable by `output_schema_id`, their parameters
//! and the payload whitelist.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde_json::{json, Map, Value};

use super::{Question, QuestionError, QuestionInput};
use crate::dsp::{
    alpha_asymmetry, alpha_subband_fingerprint, ar_fingerprint, band_power, drowsiness_index, fastica, psd_welch,
    spectrogram, DMatrix, DspError, FingerprintKind, FrequencyBand, ALPHA_SUBBAND_DEFAULT, AR_ORDER_DEFAULT,
    ICA_DEFAULT_MAX_ITERATIONS, ICA_DEFAULT_TOLERANCE, WELCH_DEFAULT_OVERLAP, WELCH_DEFAULT_WINDOW_SECONDS,
};
use crate::recording::EegRecording;

/// Hard cap on numeric values in one answer payload.
pub const MAX_PAYLOAD_VALUES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutputSchema {
    BandPower,
    Spectrogram,
    AlphaAsymmetry,
    Drowsiness,
    Fingerprint,
    Ica,
    DrowsyPlaces,
}

impl OutputSchema {
    pub const ALL: [OutputSchema; 7] = [
        OutputSchema::BandPower,
        OutputSchema::Spectrogram,
        OutputSchema::AlphaAsymmetry,
        OutputSchema::Drowsiness,
        OutputSchema::Fingerprint,
        OutputSchema::Ica,
        OutputSchema::DrowsyPlaces,
    ];

    pub fn id(self) -> &'static str {
        match self {
            OutputSchema::BandPower => "band_power",
            OutputSchema::Spectrogram => "spectrogram",
            OutputSchema::AlphaAsymmetry => "alpha_asymmetry",
            OutputSchema::Drowsiness => "drowsiness",
            OutputSchema::Fingerprint => "fingerprint",
            OutputSchema::Ica => "ica",
            OutputSchema::DrowsyPlaces => "drowsy_places",
        }
    }

    /// Aggregate schemas produce one answer over a time window from other
    /// answers instead of one answer per recording.
    pub fn is_aggregate(self) -> bool {
        self == OutputSchema::DrowsyPlaces
    }

    fn params(self) -> &'static [&'static str] {
        match self {
            OutputSchema::BandPower => &["band", "channel", "window_seconds"],
            OutputSchema::Spectrogram => &["channel", "window_seconds", "hop_seconds", "peaks"],
            OutputSchema::AlphaAsymmetry => &["left", "right"],
            OutputSchema::Drowsiness => &["channel"],
            OutputSchema::Fingerprint => &["kind", "order", "subbands"],
            OutputSchema::Ica => &["channels", "max_iterations", "tolerance", "seed"],
            OutputSchema::DrowsyPlaces => &["k"],
        }
    }
}

impl FromStr for OutputSchema {
    type Err = QuestionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OutputSchema::ALL
            .into_iter()
            .find(|schema| schema.id() == s)
            .ok_or_else(|| QuestionError::UnknownSchema(s.to_string()))
    }
}

/// A question's parameters, parsed and defaulted.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Computation {
    BandPower { band: FrequencyBand, channel: Option<String>, window_seconds: f64 },
    Spectrogram { channel: Option<String>, window_seconds: f64, hop_seconds: f64, peaks: usize },
    AlphaAsymmetry { left: String, right: String },
    Drowsiness { channel: Option<String> },
    Fingerprint { kind: FingerprintKind, order: usize, subbands: usize },
    Ica { channels: Option<Vec<String>>, max_iterations: usize, tolerance: f64, seed: u64 },
    DrowsyPlaces { k: usize },
}

struct Params<'a>(&'a BTreeMap<String, String>);

impl Params<'_> {
    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, QuestionError> {
        match self.0.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .trim()
                .parse()
                .map_err(|_| QuestionError::InvalidParams(format!("parameter {key}={raw:?} does not parse"))),
        }
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64, QuestionError> {
        let v: f64 = self.get(key, default)?;
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(QuestionError::InvalidParams(format!("parameter {key} must be positive")))
        }
    }

    fn count(&self, key: &str, default: usize, min: usize) -> Result<usize, QuestionError> {
        let v: usize = self.get(key, default)?;
        if v >= min {
            Ok(v)
        } else {
            Err(QuestionError::InvalidParams(format!("parameter {key} must be at least {min}")))
        }
    }

    fn text(&self, key: &str) -> Option<String> {
        self.0.get(key).map(|s| s.trim().to_string()).filter(|s| !s.is_empty())
    }
}

/// `alpha` style names or an explicit `low-high` range in Hz.
fn parse_band(raw: &str) -> Result<FrequencyBand, QuestionError> {
    if let Some(band) = FrequencyBand::named(raw) {
        return Ok(band);
    }
    let bad = || QuestionError::InvalidParams(format!("band {raw:?} is neither a band name nor low-high"));
    let (low, high) = raw.split_once('-').ok_or_else(bad)?;
    let low: f64 = low.trim().parse().map_err(|_| bad())?;
    let high: f64 = high.trim().parse().map_err(|_| bad())?;
    FrequencyBand::new(raw, low, high).map_err(|e| QuestionError::InvalidParams(e.to_string()))
}

impl Computation {
    pub(crate) fn parse(question: &Question) -> Result<Self, QuestionError> {
        let schema = question.schema()?;
        if let Some(unknown) = question.params.keys().find(|k| !schema.params().contains(&k.as_str())) {
            return Err(QuestionError::InvalidParams(format!(
                "{} does not take parameter {unknown}",
                schema.id()
            )));
        }
        let p = Params(&question.params);
        Ok(match schema {
            OutputSchema::BandPower => Computation::BandPower {
                band: parse_band(&p.text("band").ok_or_else(|| {
                    QuestionError::InvalidParams("band_power needs a band parameter".into())
                })?)?,
                channel: p.text("channel"),
                window_seconds: p.positive("window_seconds", WELCH_DEFAULT_WINDOW_SECONDS)?,
            },
            OutputSchema::Spectrogram => Computation::Spectrogram {
                channel: p.text("channel"),
                window_seconds: p.positive("window_seconds", WELCH_DEFAULT_WINDOW_SECONDS)?,
                hop_seconds: p.positive("hop_seconds", 10.0)?,
                peaks: p.count("peaks", 3, 1)?,
            },
            OutputSchema::AlphaAsymmetry => Computation::AlphaAsymmetry {
                left: p.text("left").unwrap_or_else(|| "F3".into()),
                right: p.text("right").unwrap_or_else(|| "F4".into()),
            },
            OutputSchema::Drowsiness => Computation::Drowsiness { channel: p.text("channel") },
            OutputSchema::Fingerprint => Computation::Fingerprint {
                kind: match p.text("kind").as_deref() {
                    None | Some("AR_COEFFS") => FingerprintKind::ArCoeffs,
                    Some("ALPHA_SUBBANDS") => FingerprintKind::AlphaSubbands,
                    Some(other) => {
                        return Err(QuestionError::InvalidParams(format!("unknown fingerprint kind {other}")))
                    }
                },
                order: p.count("order", AR_ORDER_DEFAULT, 1)?,
                subbands: p.count("subbands", ALPHA_SUBBAND_DEFAULT, 2)?,
            },
            OutputSchema::Ica => Computation::Ica {
                channels: p.text("channels").map(|s| s.split(',').map(|c| c.trim().to_string()).collect()),
                max_iterations: p.count("max_iterations", ICA_DEFAULT_MAX_ITERATIONS, 1)?,
                tolerance: p.positive("tolerance", ICA_DEFAULT_TOLERANCE)?,
                seed: p.get("seed", 0)?,
            },
            OutputSchema::DrowsyPlaces => Computation::DrowsyPlaces { k: p.count("k", super::DROWSY_PLACES_DEFAULT_K, 1)? },
        })
    }
}

/// Structural checks on a question that do not depend on the registry.
pub(crate) fn check_question(question: &Question) -> Result<(), QuestionError> {
    super::check_question_id(&question.question_id)?;
    let schema = question.schema()?;
    Computation::parse(question)?;
    if question.schedule_period_seconds == 0 {
        return Err(QuestionError::InvalidParams("schedule_period_seconds must be positive".into()));
    }
    if question.required_scope.trim().is_empty() {
        return Err(QuestionError::InvalidParams("required_scope is empty".into()));
    }
    let deps = question.dependencies().count();
    if schema.is_aggregate() {
        if question.inputs.contains(&QuestionInput::Raw) || deps != 1 {
            return Err(QuestionError::InvalidParams(format!(
                "{} takes exactly one answer dependency and no RAW input",
                schema.id()
            )));
        }
    } else if !question.inputs.contains(&QuestionInput::Raw) {
        return Err(QuestionError::InvalidParams(format!("{} needs the RAW input", schema.id())));
    }
    Ok(())
}

fn pick_channel(rec: &EegRecording, channel: &Option<String>) -> String {
    channel.clone().unwrap_or_else(|| rec.channels()[0].to_string())
}

fn signal(rec: &EegRecording, label: &str) -> Result<Vec<f64>, DspError> {
    rec.channel_f64(label).ok_or_else(|| DspError::MissingChannel(label.to_string()))
}

/// Runs a per-recording computation, returning the payload.
pub(crate) fn compute_for_recording(computation: &Computation, rec: &EegRecording) -> Result<Value, DspError> {
    let fs = rec.sample_rate_hz();
    Ok(match computation {
        Computation::BandPower { band, channel, window_seconds } => {
            let x = signal(rec, &pick_channel(rec, channel))?;
            let psd = psd_welch(&x, fs, *window_seconds, WELCH_DEFAULT_OVERLAP)?;
            json!({ "band": band.name, "power_uv2": band_power(&psd, band)? })
        }
        Computation::Spectrogram { channel, window_seconds, hop_seconds, peaks } => {
            let x = signal(rec, &pick_channel(rec, channel))?;
            let frames: Vec<Value> = spectrogram(&x, fs, *window_seconds, *hop_seconds)?
                .iter()
                .map(|f| json!({ "t_start": f.t_start_seconds, "peaks": f.psd.peaks(*peaks) }))
                .collect();
            json!({ "frames": frames })
        }
        Computation::AlphaAsymmetry { left, right } => {
            let a = alpha_asymmetry(rec, left, right)?;
            json!({ "left": a.left_power, "right": a.right_power, "asymmetry": a.asymmetry })
        }
        Computation::Drowsiness { channel } => {
            let d = drowsiness_index(rec, &pick_channel(rec, channel))?;
            json!({ "p4": d.p4, "p14": d.p14, "ratio": d.ratio })
        }
        Computation::Fingerprint { kind, order, subbands } => {
            let fp = match kind {
                FingerprintKind::ArCoeffs => ar_fingerprint(rec, *order)?,
                FingerprintKind::AlphaSubbands => alpha_subband_fingerprint(rec, *subbands)?,
            };
            json!({ "kind": fp.kind, "vector": fp.vector })
        }
        Computation::Ica { channels, max_iterations, tolerance, seed } => {
            let labels: Vec<String> = match channels {
                Some(list) => list.clone(),
                None => rec.channels().iter().map(|c| c.to_string()).collect(),
            };
            let rows = labels.iter().map(|l| signal(rec, l)).collect::<Result<Vec<_>, _>>()?;
            let n = rec.sample_count();
            let data = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
            let result = match fastica(&data, *max_iterations, *tolerance, *seed) {
                Ok(r) => r,
                Err(DspError::NotConverged(partial)) => *partial,
                Err(e) => return Err(e),
            };
            let unmixing: Vec<Vec<f64>> =
                result.unmixing_matrix.row_iter().map(|r| r.iter().copied().collect()).collect();
            json!({ "n_components": labels.len(), "converged": result.converged, "unmixing": unmixing })
        }
        Computation::DrowsyPlaces { .. } => {
            return Err(DspError::InvalidParameter("drowsy_places is computed from answers".into()))
        }
    })
}

/// Number of numeric leaves in a JSON value.
pub fn count_numeric(value: &Value) -> usize {
    match value {
        Value::Number(_) => 1,
        Value::Array(items) => items.iter().map(count_numeric).sum(),
        Value::Object(map) => map.values().map(count_numeric).sum(),
        _ => 0,
    }
}

fn reject(schema: OutputSchema, what: &str) -> QuestionError {
    QuestionError::InvalidPayload(format!("{}: {what}", schema.id()))
}

fn object<'a>(schema: OutputSchema, v: &'a Value, fields: &[&str]) -> Result<&'a Map<String, Value>, QuestionError> {
    let map = v.as_object().ok_or_else(|| reject(schema, "expected an object"))?;
    if map.len() != fields.len() || !fields.iter().all(|f| map.contains_key(*f)) {
        let got: Vec<&String> = map.keys().collect();
        return Err(reject(schema, &format!("fields {got:?}, expected {fields:?}")));
    }
    Ok(map)
}

fn numbers(schema: OutputSchema, map: &Map<String, Value>, fields: &[&str]) -> Result<(), QuestionError> {
    for f in fields {
        if !map[*f].is_number() {
            return Err(reject(schema, &format!("{f} is not a number")));
        }
    }
    Ok(())
}

fn number_list(schema: OutputSchema, v: &Value, what: &str) -> Result<usize, QuestionError> {
    let items = v.as_array().ok_or_else(|| reject(schema, &format!("{what} is not a list")))?;
    if items.iter().all(Value::is_number) {
        Ok(items.len())
    } else {
        Err(reject(schema, &format!("{what} holds a non-number")))
    }
}

fn list<'a>(schema: OutputSchema, v: &'a Value, what: &str) -> Result<&'a Vec<Value>, QuestionError> {
    v.as_array().ok_or_else(|| reject(schema, &format!("{what} is not a list")))
}

/// Checks a payload against its schema's exact field set and the numeric
/// value cap.
pub fn validate_payload(schema: OutputSchema, payload: &Value) -> Result<(), QuestionError> {
    match schema {
        OutputSchema::BandPower => {
            let m = object(schema, payload, &["band", "power_uv2"])?;
            if !m["band"].is_string() {
                return Err(reject(schema, "band is not a string"));
            }
            numbers(schema, m, &["power_uv2"])?;
        }
        OutputSchema::Spectrogram => {
            let m = object(schema, payload, &["frames"])?;
            for frame in list(schema, &m["frames"], "frames")? {
                let f = object(schema, frame, &["t_start", "peaks"])?;
                numbers(schema, f, &["t_start"])?;
                number_list(schema, &f["peaks"], "peaks")?;
            }
        }
        OutputSchema::AlphaAsymmetry => {
            let fields = ["left", "right", "asymmetry"];
            numbers(schema, object(schema, payload, &fields)?, &fields)?;
        }
        OutputSchema::Drowsiness => {
            let fields = ["p4", "p14", "ratio"];
            numbers(schema, object(schema, payload, &fields)?, &fields)?;
        }
        OutputSchema::Fingerprint => {
            let m = object(schema, payload, &["kind", "vector"])?;
            if !matches!(m["kind"].as_str(), Some("AR_COEFFS" | "ALPHA_SUBBANDS")) {
                return Err(reject(schema, "unknown kind"));
            }
            number_list(schema, &m["vector"], "vector")?;
        }
        OutputSchema::Ica => {
            let m = object(schema, payload, &["n_components", "converged", "unmixing"])?;
            let k = m["n_components"].as_u64().ok_or_else(|| reject(schema, "n_components is not a count"))?;
            if !m["converged"].is_boolean() {
                return Err(reject(schema, "converged is not a boolean"));
            }
            let rows = list(schema, &m["unmixing"], "unmixing")?;
            if rows.len() as u64 != k {
                return Err(reject(schema, "unmixing is not n_components square"));
            }
            for row in rows {
                if number_list(schema, row, "unmixing row")? as u64 != k {
                    return Err(reject(schema, "unmixing is not n_components square"));
                }
            }
        }
        OutputSchema::DrowsyPlaces => {
            let m = object(schema, payload, &["clusters"])?;
            for cluster in list(schema, &m["clusters"], "clusters")? {
                let c = object(schema, cluster, &["lat", "lon", "mean_ratio", "n"])?;
                numbers(schema, c, &["lat", "lon", "mean_ratio"])?;
                if c["n"].as_u64().is_none() {
                    return Err(reject(schema, "n is not a count"));
                }
            }
        }
    }
    let values = count_numeric(payload);
    if values > MAX_PAYLOAD_VALUES {
        return Err(reject(schema, &format!("{values} numeric values exceed the cap of {MAX_PAYLOAD_VALUES}")));
    }
    Ok(())
}
