//! Shared fixtures: an in-process store driven through the router.
#![allow(dead_code)]

use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use chrono::{DateTime, TimeDelta, TimeZone, Utc};
use npds_core::recording::{
    generate_synthetic, serialize_recording, Component, EegRecording, GeoPoint, RecordingMetadata, SyntheticSpec,
};
use npds_server::clock::{Clock, ManualClock};
use npds_server::{router, Pds, PdsConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

pub const OWNER: &str = "owner-secret-0123456789abcdef";

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, 1, 8, 0, 0).unwrap()
}

pub struct Harness {
    pub pds: Arc<Pds>,
    pub app: Router,
}

#[derive(Debug)]
pub struct Reply {
    pub status: StatusCode,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    /// The `error` code of an error body.
    pub fn code(&self) -> String {
        self.json()["error"].as_str().unwrap_or_default().to_string()
    }
}

impl Harness {
    pub fn new() -> Self {
        Self::with_config(PdsConfig::in_memory(OWNER))
    }

    pub fn with_config(config: PdsConfig) -> Self {
        Self::build(Pds::open(config).unwrap())
    }

    pub fn with_clock(config: PdsConfig, clock: Arc<dyn Clock>) -> Self {
        Self::build(Pds::open_with_clock(config, clock).unwrap())
    }

    pub fn manual(start: DateTime<Utc>) -> (Self, ManualClock) {
        let clock = ManualClock::new(start);
        (Self::with_clock(PdsConfig::in_memory(OWNER), Arc::new(clock.clone())), clock)
    }

    fn build(pds: Arc<Pds>) -> Self {
        let app = router(pds.clone());
        Harness { pds, app }
    }

    pub async fn call(&self, method: Method, path: &str, token: Option<&str>, body: Vec<u8>) -> Reply {
        let authorization = token.map(|t| format!("Bearer {t}"));
        self.call_raw(method, path, authorization.as_deref(), body).await
    }

    /// Like [`Harness::call`] with a verbatim `Authorization` header.
    pub async fn call_raw(&self, method: Method, path: &str, authorization: Option<&str>, body: Vec<u8>) -> Reply {
        let mut request = Request::builder().method(method).uri(path);
        if let Some(value) = authorization {
            request = request.header(header::AUTHORIZATION, value);
        }
        let response = self.app.clone().oneshot(request.body(Body::from(body)).unwrap()).await.unwrap();
        let status = response.status();
        let body = to_bytes(response.into_body(), usize::MAX).await.unwrap().to_vec();
        Reply { status, body }
    }

    pub async fn get(&self, path: &str, token: Option<&str>) -> Reply {
        self.call(Method::GET, path, token, Vec::new()).await
    }

    pub async fn post(&self, path: &str, token: Option<&str>, body: Value) -> Reply {
        self.call(Method::POST, path, token, serde_json::to_vec(&body).unwrap()).await
    }

    pub async fn delete(&self, path: &str, token: Option<&str>, body: Value) -> Reply {
        self.call(Method::DELETE, path, token, serde_json::to_vec(&body).unwrap()).await
    }

    pub async fn upload(&self, token: &str, bytes: &[u8]) -> Reply {
        self.call(Method::POST, "/v1/recordings", Some(token), bytes.to_vec()).await
    }

    pub async fn install(&self, question: Value) -> Reply {
        let reply = self.post("/v1/questions", Some(OWNER), question).await;
        assert_eq!(reply.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&reply.body));
        reply
    }

    /// Requests, approves and returns the token of a grant.
    pub async fn token(&self, client_id: &str, scopes: &[&str]) -> (String, String) {
        let grant = self.post("/v1/grants", None, json!({"client_id": client_id, "scopes": scopes})).await;
        assert_eq!(grant.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&grant.body));
        let grant_id = grant.json()["grant_id"].as_str().unwrap().to_string();
        let decision =
            self.post(&format!("/v1/grants/{grant_id}/decision"), Some(OWNER), json!({"approve": true})).await;
        assert_eq!(decision.status, StatusCode::OK);
        (grant_id, decision.json()["token"].as_str().unwrap().to_string())
    }

    pub async fn run(&self) -> Value {
        let reply = self.post("/v1/compute/run", Some(OWNER), json!({})).await;
        assert_eq!(reply.status, StatusCode::OK);
        reply.json()
    }

    pub fn audit_len(&self) -> usize {
        self.pds.audit_since(0).len()
    }
}

pub fn standard_questions() -> Vec<Value> {
    vec![
        json!({"question_id": "band_power", "inputs": ["RAW"], "params": {"band": "alpha"},
               "output_schema_id": "band_power", "schedule_period_seconds": 3600, "required_scope": "q:band_power"}),
        json!({"question_id": "fingerprint", "inputs": ["RAW"], "params": {"kind": "AR_COEFFS"},
               "output_schema_id": "fingerprint", "schedule_period_seconds": 3600, "required_scope": "q:fingerprint"}),
        json!({"question_id": "drowsiness_index", "inputs": ["RAW"], "params": {},
               "output_schema_id": "drowsiness", "schedule_period_seconds": 3600, "required_scope": "q:drowsiness"}),
        json!({"question_id": "drowsy_places", "inputs": ["drowsiness_index"], "params": {"k": "5"},
               "output_schema_id": "drowsy_places", "schedule_period_seconds": 3600, "required_scope": "q:places"}),
    ]
}

pub fn sine(amplitude: f64, frequency_hz: f64) -> Component {
    Component::Sinusoid { amplitude, frequency_hz, phase: 0.0 }
}

pub fn recording(offset_hours: i64, components: Vec<Component>, location: Option<(f64, f64)>, seed: u64) -> EegRecording {
    let metadata = RecordingMetadata {
        user_id: "owner".into(),
        location: location.map(|(lat, lon)| GeoPoint::new(lat, lon).unwrap()),
        ..Default::default()
    };
    let spec = SyntheticSpec::new(128.0, 16.0)
        .channel("CZ", components)
        .starting_at(t0() + TimeDelta::hours(offset_hours))
        .with_metadata(metadata);
    generate_synthetic(&spec, seed).unwrap()
}

pub fn recording_bytes(offset_hours: i64, seed: u64) -> Vec<u8> {
    serialize_recording(&recording(offset_hours, vec![sine(10.0, 10.0), Component::WhiteNoise { std: 1.0 }], None, seed))
}

/// One question per output schema, scopes `q:<id>`.
pub fn every_schema_questions() -> Vec<Value> {
    let raw = |id: &str, schema: &str, params: Value| {
        json!({"question_id": id, "inputs": ["RAW"], "params": params, "output_schema_id": schema,
               "schedule_period_seconds": 3600, "required_scope": format!("q:{id}")})
    };
    vec![
        raw("band_power", "band_power", json!({"band": "alpha"})),
        raw("spectrogram", "spectrogram", json!({"hop_seconds": "4"})),
        raw("asymmetry", "alpha_asymmetry", json!({})),
        raw("drowsiness_index", "drowsiness", json!({})),
        raw("ar_fingerprint", "fingerprint", json!({"kind": "AR_COEFFS"})),
        raw("alpha_fingerprint", "fingerprint", json!({"kind": "ALPHA_SUBBANDS"})),
        raw("ica", "ica", json!({"channels": "F3,F4,O1"})),
        json!({"question_id": "drowsy_places", "inputs": ["drowsiness_index"], "params": {},
               "output_schema_id": "drowsy_places", "schedule_period_seconds": 3600, "required_scope": "q:drowsy_places"}),
    ]
}

/// The planted block: exactly representable, far outside normal EEG range.
pub fn sentinel_block() -> Vec<f32> {
    (0..16).map(|k| 777.0 + 0.125 * k as f32).collect()
}

/// A three-channel recording with the sentinel block planted every 2 s in
/// every channel.
pub fn sentinel_recording(offset_hours: i64, location: (f64, f64), seed: u64) -> Vec<u8> {
    let base = SyntheticSpec::new(128.0, 16.0)
        .channel("F3", vec![sine(10.0, 10.0), Component::WhiteNoise { std: 2.0 }])
        .channel("F4", vec![sine(8.0, 6.0), Component::WhiteNoise { std: 2.0 }])
        .channel("O1", vec![sine(5.0, 20.0), Component::WhiteNoise { std: 2.0 }])
        .starting_at(t0() + TimeDelta::hours(offset_hours));
    let clean = generate_synthetic(&base, seed).unwrap();
    let block = sentinel_block();
    let mut samples = clean.samples().to_vec();
    for row in &mut samples {
        for start in (64..row.len() - block.len()).step_by(256) {
            row[start..start + block.len()].copy_from_slice(&block);
        }
    }
    let metadata = RecordingMetadata {
        user_id: "owner".into(),
        location: Some(GeoPoint::new(location.0, location.1).unwrap()),
        ..Default::default()
    };
    let rec = EegRecording::new(clean.channels().to_vec(), 128.0, clean.start_time(), samples, metadata).unwrap();
    serialize_recording(&rec)
}

/// Whether `body` reproduces any four consecutive sentinel samples, as
/// little-endian f32 or f64, or any fractional sentinel value as decimal
/// text. Integral values are skipped: "778" turns up inside ordinary floats.
pub fn contains_sentinel(body: &[u8]) -> bool {
    let block = sentinel_block();
    let found = |needle: &[u8]| body.windows(needle.len()).any(|w| w == needle);
    for window in block.windows(4) {
        let f32s: Vec<u8> = window.iter().flat_map(|v| v.to_le_bytes()).collect();
        let f64s: Vec<u8> = window.iter().flat_map(|v| (*v as f64).to_le_bytes()).collect();
        if found(&f32s) || found(&f64s) {
            return true;
        }
    }
    block.iter().filter(|v| v.fract() != 0.0).any(|v| found(format!("{v}").as_bytes()))
}
