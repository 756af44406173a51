//! Acceptance suite. Each criterion runs under its time limit and prints one
//! PASS or FAIL line; the process fails if any criterion does.

mod common;

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeDelta, TimeZone, Utc};
use common::*;
use npds_cli::client::{Client, Credential};
use npds_cli::demo::{demo_aggregate, plaintext_sum};
use npds_core::aggregate::{
    aggregate, decode_fixed, encode_fixed, mask_share, participants_hash, sum_shares, AggregateError, MaskedShare,
    SessionSpec, SCALE,
};
use npds_core::dsp::{ar_fingerprint, ar_from_reflection, band_power, enroll, fastica, identify, psd_welch_default, DMatrix, FrequencyBand};
use npds_core::recording::{
    generate_synthetic, parse_recordings, serialize_recording, Component, EegRecording, GeoPoint, RecordingMetadata,
    SyntheticSpec,
};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use ureq::http::Method;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn ensure(ok: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(why())
    }
}

fn variance(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
}

fn sine(amplitude: f64, frequency_hz: f64) -> Component {
    Component::Sinusoid { amplitude, frequency_hz, phase: 0.0 }
}

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, 1, 8, 0, 0).unwrap()
}

fn parseval() -> Outcome {
    let spec = SyntheticSpec::new(128.0, 8.0).channel("CZ", vec![sine(10.0, 10.0)]);
    let x = generate_synthetic(&spec, 0).unwrap().channel_f64("CZ").unwrap();
    let psd = psd_welch_default(&x, 128.0).map_err(|e| e.to_string())?;
    let alpha = band_power(&psd, &FrequencyBand::alpha()).map_err(|e| e.to_string())?;
    let (total, var) = (psd.total_power(), variance(&x));
    ensure((alpha - 50.0).abs() <= 0.05 * 50.0, || format!("alpha power {alpha:.3} µV²"))?;
    ensure((total - var).abs() <= 0.03 * var, || format!("total {total:.3} vs variance {var:.3}"))?;
    Ok(format!("alpha {alpha:.3} µV², total {total:.3} vs variance {var:.3}"))
}

fn ar_recovery() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let spec = SyntheticSpec::new(128.0, 60.0)
            .channel("CZ", vec![Component::Ar { coefficients: vec![0.75, -0.5], noise_std: 1.0 }]);
        let v = ar_fingerprint(&generate_synthetic(&spec, seed).unwrap(), 2).map_err(|e| e.to_string())?.vector;
        let err = (v[0] - 0.75).abs().max((v[1] + 0.5).abs());
        ensure(err <= 0.05, || format!("seed {seed}: estimated {v:?}"))?;
        worst = worst.max(err);
    }
    Ok(format!("20 seeds, worst coefficient error {worst:.4}"))
}

/// Reflection coefficients spread over (-0.75, 0.75), so every generator is
/// stable and the ten are distinct.
fn subject_coefficients(s: usize) -> Vec<f64> {
    let k: Vec<f64> = [2.0f64, 3.0, 5.0, 7.0, 11.0, 13.0]
        .iter()
        .map(|p| 0.75 * (((s + 1) as f64 * p.sqrt()).fract() * 2.0 - 1.0))
        .collect();
    ar_from_reflection(&k)
}

fn two_minutes(coefficients: &[f64], seed: u64) -> (EegRecording, EegRecording) {
    let spec = SyntheticSpec::new(128.0, 120.0)
        .channel("CZ", vec![Component::Ar { coefficients: coefficients.to_vec(), noise_std: 5.0 }]);
    let rec = generate_synthetic(&spec, seed).unwrap();
    let x = rec.channel("CZ").unwrap();
    let minute = |i: usize| {
        let samples = vec![x[i * 7680..(i + 1) * 7680].to_vec()];
        EegRecording::new(rec.channels().to_vec(), 128.0, rec.start_time(), samples, RecordingMetadata::default()).unwrap()
    };
    (minute(0), minute(1))
}

fn identification() -> Outcome {
    let fingerprint = |r: &EegRecording| ar_fingerprint(r, 6).unwrap();
    let mut enrolled = Vec::new();
    let mut probes = Vec::new();
    for s in 0..10 {
        let (first, second) = two_minutes(&subject_coefficients(s), 1000 + s as u64);
        enrolled.push((format!("s{s:02}"), fingerprint(&first)));
        probes.push((format!("s{s:02}"), fingerprint(&second)));
    }
    let model = enroll(&enrolled).map_err(|e| e.to_string())?;
    let hits = probes.iter().filter(|(id, fp)| identify(&model, fp).unwrap().subject_id == *id).count();
    let accuracy = hits as f64 / 10.0;
    ensure(accuracy >= 0.8, || format!("accuracy {accuracy}"))?;

    // two subjects drawn from one generator cannot be told apart
    let shared = subject_coefficients(4);
    let mut control_hits = 0;
    for t in 0..100 {
        let (a1, a2) = two_minutes(&shared, 50_000 + 2 * t);
        let (b1, b2) = two_minutes(&shared, 50_001 + 2 * t);
        let model = enroll(&[("a".to_string(), fingerprint(&a1)), ("b".to_string(), fingerprint(&b1))]).unwrap();
        control_hits += (identify(&model, &fingerprint(&a2)).unwrap().subject_id == "a") as u32;
        control_hits += (identify(&model, &fingerprint(&b2)).unwrap().subject_id == "b") as u32;
    }
    let control = control_hits as f64 / 200.0;
    ensure((control - 0.5).abs() <= 0.15, || format!("control accuracy {control}"))?;
    Ok(format!("accuracy {accuracy:.2}, identical-generator control {control:.3}"))
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn ica_unmixing() -> Outcome {
    let n = 4000;
    let sources = DMatrix::from_fn(2, n, |i, j| {
        let t = j as f64 / 200.0;
        if i == 0 {
            (2.0 * PI * 5.0 * t).sin()
        } else {
            2.0 * (1.3 * t).fract() - 1.0
        }
    });
    let observed = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]) * &sources;
    let result = fastica(&observed, 500, 1e-5, 11).map_err(|e| e.to_string())?;
    let row = |m: &DMatrix<f64>, i: usize| m.row(i).iter().copied().collect::<Vec<f64>>();
    let mut worst: f64 = 1.0;
    for i in 0..2 {
        let best = (0..2).map(|j| correlation(&row(&result.sources, i), &row(&sources, j)).abs()).fold(0.0, f64::max);
        worst = worst.min(best);
    }
    ensure(worst > 0.95, || format!("weakest |correlation| {worst:.4}"))?;
    let mut centered = observed.clone();
    for (i, m) in result.mean.iter().enumerate() {
        centered.row_mut(i).add_scalar_mut(-m);
    }
    let z = &result.whitening_matrix * centered;
    let cov = &z * z.transpose() / z.ncols() as f64;
    let deviation = (cov - DMatrix::<f64>::identity(2, 2)).abs().max();
    ensure(deviation <= 1e-6, || format!("whitened covariance off identity by {deviation:e}"))?;
    Ok(format!("weakest |correlation| {worst:.4}, whitened covariance within {deviation:.1e} of I"))
}

fn every_schema_questions() -> Vec<Value> {
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

/// Exactly representable and far outside the synthetic signal range.
fn sentinel_block() -> Vec<f32> {
    (0..16).map(|k| 777.0 + 0.125 * k as f32).collect()
}

fn sentinel_recording(offset_hours: i64, location: (f64, f64), seed: u64) -> Vec<u8> {
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
        location: Some(GeoPoint::new(location.0, location.1).unwrap()),
        ..Default::default()
    };
    serialize_recording(&EegRecording::new(clean.channels().to_vec(), 128.0, clean.start_time(), samples, metadata).unwrap())
}

/// Any four consecutive sentinel samples as little-endian f32 or f64, or a
/// fractional sentinel value as decimal text.
fn contains_sentinel(body: &[u8]) -> bool {
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

fn privacy_boundary() -> Outcome {
    let server = Server::start();
    let owner = Client::new(&server.url, Credential::Owner(OWNER.into()));
    let questions = every_schema_questions();
    for q in &questions {
        owner.post("/v1/questions", q).map_err(|e| e.to_string())?;
    }
    let mut ids = Vec::new();
    for (i, at) in [(48.2, 16.37), (50.08, 14.42), (48.2, 16.37)].into_iter().enumerate() {
        let bytes = sentinel_recording(i as i64, at, i as u64);
        let receipt = owner.send(Method::POST, "/v1/recordings", Some(("application/octet-stream", bytes))).unwrap();
        ids.push(serde_json::from_slice::<Value>(&receipt).unwrap()["recording_id"].as_str().unwrap().to_string());
    }
    owner.json::<Value>(Method::POST, "/v1/compute/run", None).unwrap();
    let export = owner.send(Method::GET, "/v1/recordings/export", None).unwrap();
    ensure(contains_sentinel(&export), || "positive control: owner export lacks the sentinel".into())?;

    let mut scopes: Vec<&str> = questions.iter().map(|q| q["required_scope"].as_str().unwrap()).collect();
    scopes.extend(["upload", "aggregate:participate"]);
    let (_, token) = server.token("curious-app", &scopes);
    let pending = Client::new(&server.url, Credential::None)
        .post("/v1/grants", &json!({"client_id": "other", "scopes": ["upload"]}))
        .unwrap();
    let pending_id = pending["grant_id"].as_str().unwrap();
    let participants = vec!["pds-local".to_string(), "b".to_string(), "c".to_string()];
    let session = json!({"session_id": "walk", "question_id": "drowsiness_index", "field": "ratio",
        "participants": participants, "participants_hash": participants_hash("walk", &participants)});

    let body = |v: Value| v.to_string().into_bytes();
    let mut walk: Vec<(Method, String, Vec<u8>)> = vec![
        (Method::GET, "/v1/recordings".into(), vec![]),
        (Method::GET, "/v1/recordings/export".into(), vec![]),
        (Method::POST, "/v1/recordings".into(), sentinel_recording(9, (1.0, 1.0), 99)),
        (Method::DELETE, "/v1/recordings".into(), body(json!({"all": true}))),
        (Method::GET, "/v1/grants".into(), vec![]),
        (Method::POST, "/v1/grants".into(), body(json!({"client_id": "x", "scopes": ["upload"]}))),
        (Method::POST, format!("/v1/grants/{pending_id}/decision"), body(json!({"approve": true}))),
        (Method::DELETE, format!("/v1/grants/{pending_id}"), vec![]),
        (Method::GET, "/v1/questions".into(), vec![]),
        (Method::POST, "/v1/questions".into(), body(questions[0].clone())),
        (Method::POST, "/v1/compute/run".into(), vec![]),
        (Method::GET, "/v1/audit".into(), vec![]),
        (Method::POST, "/v1/aggregate/peers".into(), body(json!({"peer_id": "b", "secret": "00".repeat(32)}))),
        (Method::POST, "/v1/aggregate/sessions".into(), body(session)),
        (Method::POST, "/v1/aggregate/sessions/walk/contribute".into(), vec![]),
        (Method::GET, "/v1/answers/unknown".into(), vec![]),
        (Method::GET, "/v1/elsewhere".into(), vec![]),
        (Method::PUT, "/v1/recordings/export".into(), vec![]),
        (Method::GET, "/console/index.html".into(), vec![]),
    ];
    for id in &ids {
        walk.push((Method::GET, format!("/v1/recordings/{id}/raw"), vec![]));
        walk.push((Method::DELETE, "/v1/recordings".into(), body(json!({"recording_ids": [id]}))));
    }
    for q in &questions {
        let qid = q["question_id"].as_str().unwrap();
        walk.push((Method::GET, format!("/v1/answers/{qid}"), vec![]));
        walk.push((Method::GET, format!("/v1/answers/{qid}?subject={}", ids[0]), vec![]));
    }

    let client = Client::new(&server.url, Credential::Token(token.clone()));
    let before = server.pds.audit_since(0).len();
    let mut served = 0;
    for (method, path, payload) in &walk {
        let content = (!payload.is_empty()).then(|| ("application/json", payload.clone()));
        let (status, reply) = client.raw(method.clone(), path, content).map_err(|e| format!("{method} {path}: {e}"))?;
        ensure(!contains_sentinel(&reply), || format!("{method} {path} leaked raw samples"))?;
        served += (path.starts_with("/v1/answers/") && status == 200) as usize;
    }
    ensure(served == 2 * questions.len(), || format!("only {served} answer requests were served"))?;
    let entries = server.pds.audit_since(before as u64);
    ensure(entries.len() == walk.len(), || format!("{} requests, {} audit entries", walk.len(), entries.len()))?;
    ensure(entries.iter().all(|e| e.client_id == "curious-app"), || "entry attributed to another client".into())?;

    // 100 concurrent requests over TCP
    let before = server.pds.audit_since(0).len();
    std::thread::scope(|scope| {
        for i in 0..100 {
            let client = if i % 3 == 0 { Client::new(&server.url, Credential::None) } else { client.clone() };
            scope.spawn(move || client.raw(Method::GET, if i % 2 == 0 { "/v1/answers/band_power" } else { "/v1/questions" }, None));
        }
    });
    let entries = server.pds.audit_since(0);
    ensure(entries.len() == before + 100, || format!("{} entries after 100 concurrent requests", entries.len() - before))?;
    let gap_free = entries.iter().enumerate().all(|(i, e)| e.seq == i as u64 + 1);
    ensure(gap_free, || "audit sequence has gaps".into())?;
    Ok(format!("{} endpoints walked, 0 leaks, one entry each; seq 1..={} gap-free", walk.len(), entries.len()))
}

fn located(components: Vec<Component>, at: (f64, f64), offset_minutes: i64, seed: u64) -> Vec<u8> {
    let metadata = RecordingMetadata { location: Some(GeoPoint::new(at.0, at.1).unwrap()), ..Default::default() };
    let spec = SyntheticSpec::new(128.0, 16.0)
        .channel("CZ", components)
        .starting_at(t0() + TimeDelta::minutes(offset_minutes))
        .with_metadata(metadata);
    serialize_recording(&generate_synthetic(&spec, seed).unwrap())
}

fn revocation_and_deletion() -> Outcome {
    let server = Server::start();
    let owner = Client::new(&server.url, Credential::Owner(OWNER.into()));
    for q in every_schema_questions().into_iter().filter(|q| {
        ["band_power", "drowsiness_index", "drowsy_places"].contains(&q["question_id"].as_str().unwrap())
    }) {
        owner.post("/v1/questions", &q).unwrap();
    }
    let upload = |bytes: Vec<u8>| -> String {
        let receipt = owner.send(Method::POST, "/v1/recordings", Some(("application/octet-stream", bytes))).unwrap();
        serde_json::from_slice::<Value>(&receipt).unwrap()["recording_id"].as_str().unwrap().to_string()
    };
    let drowsy = upload(located(vec![sine(20.0, 4.0), sine(4.0, 14.0)], (48.2, 16.37), 0, 1));
    let alert = upload(located(vec![sine(4.0, 4.0), sine(20.0, 14.0)], (50.08, 14.42), 30, 2));
    owner.json::<Value>(Method::POST, "/v1/compute/run", None).unwrap();

    let scopes = ["q:band_power", "q:drowsiness_index", "q:drowsy_places", "aggregate:participate", "upload"];
    let (grant_id, token) = server.token("research-app", &scopes);
    let app = Client::new(&server.url, Credential::Token(token));
    let ratio_of = |id: &str| -> f64 {
        let answers = app.get(&format!("/v1/answers/drowsiness_index?subject={id}")).unwrap();
        answers[0]["payload"]["ratio"].as_f64().unwrap()
    };
    let (r_drowsy, r_alert) = (ratio_of(&drowsy), ratio_of(&alert));

    // a three-party session this store takes part in; the same session id
    // and seeds mean the mask cancels between two shares of this store
    for peer in ["b", "c"] {
        owner.post("/v1/aggregate/peers", &json!({"peer_id": peer, "secret": "ab".repeat(32)})).unwrap();
    }
    let participants = vec!["pds-local".to_string(), "b".to_string(), "c".to_string()];
    let session = json!({"session_id": "s", "question_id": "drowsiness_index", "field": "ratio",
        "participants": participants, "participants_hash": participants_hash("s", &participants)});
    app.post("/v1/aggregate/sessions", &session).unwrap();
    let share = || -> u64 {
        let s: MaskedShare = serde_json::from_value(app.post("/v1/aggregate/sessions/s/contribute", &json!({})).unwrap()).unwrap();
        s.value
    };
    let before_share = share();

    let removed = owner.json::<Value>(Method::DELETE, "/v1/recordings", Some(&json!({"recording_ids": [drowsy]}))).unwrap();
    ensure(removed["deleted"] == json!([drowsy]), || format!("delete returned {removed}"))?;
    ensure(app.get(&format!("/v1/answers/band_power?subject={drowsy}")).unwrap() == json!([]), || {
        "answers about the deleted recording are still served".into()
    })?;
    let export = owner.send(Method::GET, "/v1/recordings/export", None).unwrap();
    let remaining: Vec<String> = parse_recordings(&export).unwrap().iter().map(|r| r.id().as_str().to_string()).collect();
    ensure(remaining == vec![alert.clone()], || format!("export still holds {remaining:?}"))?;
    let delta = share().wrapping_sub(before_share);
    let expected = encode_fixed(r_alert).unwrap().wrapping_sub(encode_fixed((r_drowsy + r_alert) / 2.0).unwrap());
    ensure(delta == expected, || "contribution does not reflect the deletion".into())?;
    owner.json::<Value>(Method::POST, "/v1/compute/run", None).unwrap();
    let places = app.get("/v1/answers/drowsy_places").unwrap();
    let clusters = places[0]["payload"]["clusters"].as_array().cloned().unwrap_or_default();
    ensure(clusters.len() == 1 && clusters[0]["lat"] == 50.08, || format!("places after deletion: {places}"))?;

    owner.json::<Value>(Method::DELETE, &format!("/v1/grants/{grant_id}"), None).unwrap();
    let before = server.pds.audit_since(0).len();
    let attempts: Vec<(Method, &str, Option<Value>)> = vec![
        (Method::GET, "/v1/answers/band_power", None),
        (Method::GET, "/v1/answers/drowsiness_index", None),
        (Method::GET, "/v1/answers/drowsy_places", None),
        (Method::GET, "/v1/questions", None),
        (Method::POST, "/v1/aggregate/sessions", Some(session.clone())),
        (Method::POST, "/v1/aggregate/sessions/s/contribute", Some(json!({}))),
        (Method::POST, "/v1/recordings", None),
    ];
    for (method, path, payload) in &attempts {
        let content = payload.as_ref().map(|p| ("application/json", p.to_string().into_bytes()));
        let (status, _) = app.raw(method.clone(), path, content).unwrap();
        ensure(status == 401, || format!("{method} {path} after revocation gave {status}"))?;
    }
    let entries = server.pds.audit_since(before as u64);
    let all_denied = entries.len() == attempts.len()
        && entries.iter().all(|e| e.outcome == npds_server::audit::Outcome::Denied && e.client_id == "research-app");
    ensure(all_denied, || "post-revocation requests not all audited as DENIED".into())?;
    Ok(format!("{} post-revocation requests DENIED; deletion reached answers, export, places and shares", attempts.len()))
}

fn aggregation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for n in [3usize, 5, 10] {
        for trial in 0..100 {
            let spec = SessionSpec {
                session_id: format!("trial-{n}-{trial}"),
                question_id: "q".into(),
                field: "x".into(),
                participants: (0..n).map(|i| format!("p{i}")).collect(),
            };
            let mut seeds = vec![vec![[0u8; 32]; n]; n];
            for i in 0..n {
                for j in i + 1..n {
                    rng.fill_bytes(&mut seeds[i][j]);
                    seeds[j][i] = seeds[i][j];
                }
            }
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..=100.0)).collect();
            let shares: Vec<MaskedShare> =
                (0..n).map(|i| mask_share(&spec, i, values[i], |j| Some(seeds[i][j])).unwrap()).collect();
            // plaintext oracle: exact integer sum of the encoded inputs
            let exact: i128 = values.iter().map(|v| (v * SCALE).round() as i128).sum();
            let truth = exact as f64 / SCALE;
            let sum = aggregate(&spec, &shares).map_err(|e| e.to_string())?.sum;
            ensure(sum == truth, || format!("n={n} trial {trial}: {sum} != {truth}"))?;
            let withheld = rng.random_range(0..n);
            let partial: Vec<&MaskedShare> = shares.iter().enumerate().filter(|(i, _)| *i != withheld).map(|(_, s)| s).collect();
            let decoded = decode_fixed(sum_shares(partial.iter().copied()), n);
            ensure(!decoded.is_ok_and(|d| d == truth), || format!("n={n} trial {trial}: withheld share still decodes"))?;
        }
        // once per size through live stores
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..=100.0)).collect();
        let report = demo_aggregate(&values, n as u64).map_err(|e| e.to_string())?;
        ensure(report.verified && report.sum == plaintext_sum(&values).unwrap(), || format!("live n={n}: {report:?}"))?;
    }
    let pair = SessionSpec {
        session_id: "pair".into(),
        question_id: "q".into(),
        field: "x".into(),
        participants: vec!["a".into(), "b".into()],
    };
    ensure(matches!(pair.validate(), Err(AggregateError::MinimumGroupSize { n: 2 })), || "N=2 accepted".into())?;
    let live = demo_aggregate(&[1.0, 2.0], 0);
    ensure(live.as_ref().is_err_and(|e| e.to_string().starts_with("MinimumGroupSize")), || format!("live N=2: {live:?}"))?;
    Ok("N=3,5,10 x 100 trials exact; every withheld share breaks the sum; N=2 refused".into())
}

fn end_to_end() -> Outcome {
    let server = Server::start();
    let dir = server.dir.path();
    let places = [("drowsy", (48.208, 16.373), "20,4", "4,14"), ("alert", (50.087, 14.421), "4,4", "20,14")];
    let mut files = Vec::new();
    for (i, (name, (lat, lon), theta, beta)) in places.iter().enumerate() {
        let spec = spec_text(&[
            ("sample_rate", "128"),
            ("duration", "30"),
            ("start", &format!("2024-03-01T0{}:00:00Z", 8 + i)),
            ("channels", "CZ"),
            ("CZ.sine", theta),
            ("CZ.sine", beta),
            ("CZ.noise", "0.5"),
            ("lat", &lat.to_string()),
            ("lon", &lon.to_string()),
        ]);
        let spec_path = write(dir, &format!("{name}.spec"), &spec);
        let out = server.path(&format!("{name}.npds")).display().to_string();
        let run = npds(&["generate", "--spec", &spec_path, "--seed", &i.to_string(), "--out", &out]);
        ensure(run.code == 0, || format!("generate: {}", run.stderr))?;
        files.push(out);
    }
    let questions: Vec<Value> = every_schema_questions()
        .into_iter()
        .filter(|q| ["drowsiness_index", "drowsy_places"].contains(&q["question_id"].as_str().unwrap()))
        .collect();
    let questions_path = write(dir, "questions.json", &Value::Array(questions).to_string());
    for step in [
        server.owner(&["upload", &files[0], &files[1]]),
        server.owner(&["questions", "install", &questions_path]),
        server.owner(&["run"]),
    ] {
        ensure(step.code == 0, || step.stderr.clone())?;
    }
    let (_, token) = server.token("maps", &["q:drowsy_places"]);
    let fetched = server.with_token(&token, &["answers", "drowsy_places"]);
    ensure(fetched.code == 0, || fetched.stderr.clone())?;
    let answers: Value = serde_json::from_str(&fetched.stdout).map_err(|e| e.to_string())?;
    let clusters = answers[0]["payload"]["clusters"].as_array().cloned().unwrap_or_default();
    let ranked: Vec<(f64, f64)> = clusters.iter().map(|c| (c["lat"].as_f64().unwrap(), c["lon"].as_f64().unwrap())).collect();
    ensure(ranked == vec![places[0].1, places[1].1], || format!("ranking {ranked:?}"))?;
    let ratios: Vec<f64> = clusters.iter().map(|c| c["mean_ratio"].as_f64().unwrap()).collect();
    // theta/beta power ratio of the construction: (20/4)^2 and (4/20)^2
    ensure((ratios[0] - 25.0).abs() < 2.5 && (ratios[1] - 0.04).abs() < 0.004, || format!("ratios {ratios:?}"))?;
    Ok(format!("drowsy place first (ratio {:.2}), alert place second (ratio {:.4})", ratios[0], ratios[1]))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("parseval_band_power", Duration::from_secs(1), parseval),
        ("ar_recovery", Duration::from_secs(5), ar_recovery),
        ("identification", Duration::from_secs(30), identification),
        ("ica_unmixing", Duration::from_secs(5), ica_unmixing),
        ("privacy_boundary", Duration::from_secs(60), privacy_boundary),
        ("revocation_and_deletion", Duration::from_secs(10), revocation_and_deletion),
        ("aggregation", Duration::from_secs(10), aggregation),
        ("end_to_end", Duration::from_secs(15), end_to_end),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = BTreeSet::new();
    for (name, limit, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
            let message = panic.downcast_ref::<String>().cloned().or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", message.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed <= limit {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}"))
            }
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} ({elapsed:.2?})"),
            Err(why) => {
                println!("FAIL {name}: {why} ({elapsed:.2?})");
                failed.insert(name);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("{} acceptance criteria failed: {failed:?}", failed.len());
        std::process::exit(1);
    }
}
