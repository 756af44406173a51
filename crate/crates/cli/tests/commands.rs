//! The `npds` binary against a live store.

mod common;

use common::*;
use npds_core::recording::{parse_recording, parse_recordings};
use serde_json::{json, Value};

fn sine_spec(start: &str) -> String {
    spec_text(&[
        ("sample_rate", "128"),
        ("duration", "16"),
        ("start", start),
        ("channels", "CZ"),
        ("CZ.sine", "10,10"),
        ("CZ.noise", "1.0"),
    ])
}

fn questions_file(server: &Server) -> String {
    let questions = json!([
        {"question_id": "band_power", "inputs": ["RAW"], "params": {"band": "alpha"},
         "output_schema_id": "band_power", "schedule_period_seconds": 3600, "required_scope": "q:band_power"},
        {"question_id": "drowsiness_index", "inputs": ["RAW"], "params": {},
         "output_schema_id": "drowsiness", "schedule_period_seconds": 3600, "required_scope": "q:drowsiness"},
    ]);
    write(server.dir.path(), "questions.json", &questions.to_string())
}

#[test]
fn generate_writes_a_parseable_deterministic_file() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "sine.spec",
        &spec_text(&[("sample_rate", "128"), ("duration", "60"), ("channels", "CZ"), ("CZ.sine", "10,10,0")]),
    );
    let out = |name: &str| dir.path().join(name).display().to_string();
    let report = npds(&["generate", "--spec", &spec, "--seed", "7", "--out", &out("a.npds")]).ok();
    assert_eq!(report["sample_count"], 128 * 60);

    let bytes = std::fs::read(out("a.npds")).unwrap();
    let rec = parse_recording(&bytes).unwrap();
    assert_eq!(report["recording_id"], rec.id().as_str());
    let x = rec.channel_f64("CZ").unwrap();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let variance = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
    // A^2 / 2 for A = 10
    assert!((variance - 50.0).abs() <= 0.5, "variance {variance}");

    npds(&["generate", "--spec", &spec, "--seed", "7", "--out", &out("b.npds")]).ok();
    assert_eq!(bytes, std::fs::read(out("b.npds")).unwrap());
    npds(&["generate", "--spec", &spec, "--seed", "8", "--out", &out("c.npds")]).ok();
    // a pure sinusoid ignores the seed; noise does not
    let noisy = write(dir.path(), "noisy.spec", &spec_text(&[("sample_rate", "128"), ("duration", "4"), ("channels", "CZ"), ("CZ.noise", "1")]));
    npds(&["generate", "--spec", &noisy, "--seed", "1", "--out", &out("n1.npds")]).ok();
    npds(&["generate", "--spec", &noisy, "--seed", "2", "--out", &out("n2.npds")]).ok();
    assert_ne!(std::fs::read(out("n1.npds")).unwrap(), std::fs::read(out("n2.npds")).unwrap());

    let unstable = write(
        dir.path(),
        "unstable.spec",
        &spec_text(&[("sample_rate", "128"), ("duration", "4"), ("channels", "CZ"), ("CZ.ar", "1.0;1.5")]),
    );
    let run = npds(&["generate", "--spec", &unstable, "--out", &out("u.npds")]);
    assert_eq!(run.code, 1);
    assert!(run.err().contains("BadSpec"), "{}", run.stderr);
    assert!(!dir.path().join("u.npds").exists());
    let garbled = write(dir.path(), "garbled.spec", "sample_rate 128\n");
    assert!(npds(&["generate", "--spec", &garbled, "--out", &out("g.npds")]).err().contains("BadSpec"));
}

#[test]
fn upload_run_answers_and_revocation() {
    let server = Server::start();
    let dir = server.dir.path();
    let spec = write(dir, "r.spec", &sine_spec("2024-03-01T08:00:00Z"));
    let file = server.path("r.npds").display().to_string();
    npds(&["generate", "--spec", &spec, "--seed", "1", "--out", &file]).ok();

    let installed = server.owner(&["questions", "install", &questions_file(&server)]).ok();
    assert_eq!(installed.as_array().unwrap().len(), 2);
    let receipts = server.owner(&["upload", &file]).ok();
    assert_eq!(receipts[0]["created"], true);
    assert_eq!(server.owner(&["upload", &file]).ok()[0]["created"], false);

    let first = server.owner(&["run"]).ok();
    assert_eq!((first["jobs"].as_u64(), first["done"].as_u64()), (Some(2), Some(2)));
    assert_eq!(server.owner(&["run"]).ok()["jobs"], 0);

    let (grant_id, token) = server.token("dashboard", &["q:band_power"]);
    let answers = server.with_token(&token, &["answers", "band_power"]).ok();
    let power = answers[0]["payload"]["power_uv2"].as_f64().unwrap();
    assert!((power - 50.0).abs() < 5.0, "alpha power {power}");
    let filtered = server
        .with_token(&token, &["answers", "band_power", "--from", "2024-03-01T09:00:00+00:00"])
        .ok();
    assert_eq!(filtered, json!([]));
    assert!(server.with_token(&token, &["answers", "drowsiness_index"]).err().contains("ScopeDenied"));

    server.owner(&["grants", "revoke", &grant_id]).ok();
    let denied = server.with_token(&token, &["answers", "band_power"]);
    assert_eq!(denied.code, 1);
    assert!(denied.err().contains("Unauthorized"));
}

#[test]
fn grant_lifecycle() {
    let server = Server::start();
    let pending = server.npds(&["grants", "request", "--client", "app", "--scope", "upload"]).ok();
    assert_eq!(pending["state"], "PENDING");
    let id = pending["grant_id"].as_str().unwrap();
    assert!(server.npds(&["grants", "list"]).err().contains("Unauthorized"));
    let listed = server.owner(&["grants", "list"]).ok();
    assert_eq!(listed[0]["grant_id"], id);

    let denied = server.owner(&["grants", "deny", id]).ok();
    assert_eq!(denied["grant"]["state"], "REVOKED");
    assert!(denied.get("token").is_none());
    assert!(server.owner(&["grants", "approve", id]).err().contains("AlreadyDecided"));
    assert!(server.owner(&["grants", "revoke", "g-nope"]).err().contains("UnknownGrant"));
    assert!(server.npds(&["grants", "request", "--client", "app", "--scope", "q:none"]).err().contains("UnknownScope"));

    let (_, token) = server.token("uploader", &["upload"]);
    assert!(server.with_token(&token, &["grants", "list"]).err().contains("ScopeDenied"));
}

#[test]
fn export_delete_and_audit() {
    let server = Server::start();
    let dir = server.dir.path();
    let mut files = Vec::new();
    // uploaded out of time order; export is ordered by start time
    for (i, start) in ["2024-03-02T08:00:00Z", "2024-03-01T08:00:00Z"].iter().enumerate() {
        let spec = write(dir, &format!("{i}.spec"), &sine_spec(start));
        let file = server.path(&format!("{i}.npds")).display().to_string();
        npds(&["generate", "--spec", &spec, "--seed", &i.to_string(), "--out", &file]).ok();
        files.push(file);
    }
    server.owner(&["upload", &files[0], &files[1]]).ok();

    let out = server.path("export.npds").display().to_string();
    let report = server.owner(&["export", "--out", &out]).ok();
    let exported = std::fs::read(&out).unwrap();
    let expected = [std::fs::read(&files[1]).unwrap(), std::fs::read(&files[0]).unwrap()].concat();
    assert_eq!(exported, expected);
    let ids: Vec<String> = parse_recordings(&exported).unwrap().iter().map(|r| r.id().as_str().to_string()).collect();
    assert_eq!(report["recording_ids"], json!(ids));

    let (_, token) = server.token("app", &["upload"]);
    assert!(server.with_token(&token, &["export", "--out", &out]).err().contains("ScopeDenied"));
    assert!(server.owner(&["delete"]).err().contains("usage"));
    assert!(server.owner(&["delete", "0000"]).err().contains("UnknownRecording"));
    let deleted = server.owner(&["delete", &ids[0]]).ok();
    assert_eq!(deleted["deleted"], json!([ids[0]]));
    assert_eq!(server.owner(&["delete", "--all"]).ok()["deleted"], json!([ids[1]]));
    assert_eq!(server.pds.list_recordings().len(), 0);

    let audit = server.owner(&["audit"]).ok();
    let entries = audit.as_array().unwrap();
    assert!(entries.iter().any(|e| e["endpoint"] == "GET /v1/recordings/export" && e["outcome"] == "DENIED"));
    assert!(entries.windows(2).all(|w| w[1]["seq"].as_u64() == w[0]["seq"].as_u64().map(|s| s + 1)));
    let tail = server.owner(&["audit", "--since", "3"]).ok();
    assert_eq!(tail[0]["seq"], 4);
    assert!(server.with_token(&token, &["audit"]).err().contains("ScopeDenied"));
}

#[test]
fn table_output_and_flag_errors() {
    let server = Server::start();
    server.owner(&["questions", "install", &questions_file(&server)]).ok();
    let table = server.npds(&["--format", "table", "questions", "list"]);
    assert_eq!(table.code, 0);
    let header = table.stdout.lines().next().unwrap();
    assert!(header.contains("question_id") && header.contains("required_scope"));
    assert_eq!(table.stdout.lines().count(), 3);

    let both = server.npds(&["--token", "t", "--owner-cred", &server.owner_cred(), "run"]);
    assert_eq!(both.code, 2);
    let missing = server.npds(&["--owner-cred", "/nonexistent/cred", "run"]);
    assert!(missing.err().contains("io"));
    let offline = npds(&["--server", "http://127.0.0.1:9", "questions", "list"]);
    assert_eq!(offline.code, 3);
}

#[test]
fn demo_aggregate_verbs() {
    let report = npds(&["demo-aggregate", "--values", "2,3,5"]).ok();
    assert_eq!(report["sum"], 10.0);
    assert_eq!(report["verified"], true);
    assert_eq!(report["participants"].as_array().unwrap().len(), 3);

    let refused = npds(&["demo-aggregate", "--values", "2,3"]);
    assert_eq!(refused.code, 1);
    assert!(refused.stderr.contains("MinimumGroupSize"));

    let dir = tempfile::tempdir().unwrap();
    let answers = write(dir.path(), "answers.txt", "1.5\n-2.25, four\n");
    assert!(npds(&["demo-aggregate", "--answers", &answers]).err().contains("usage"));
    let answers = write(dir.path(), "answers.txt", "1.5\n-2.25, 4\n0.125\n");
    let report: Value = npds(&["demo-aggregate", "--answers", &answers, "--nodes", "4"]).ok();
    assert_eq!(report["sum"], 3.375);
    assert!(npds(&["demo-aggregate", "--answers", &answers, "--nodes", "5"]).err().contains("4 values"));
}
