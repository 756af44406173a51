#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use npds_server::{Pds, PdsConfig};
use serde_json::Value;
use tokio::runtime::Runtime;
use tokio::sync::oneshot;

pub const OWNER: &str = "cli-owner-secret-0123456789";

/// A store serving on a loopback port for the duration of a test.
pub struct Server {
    pub url: String,
    pub pds: Arc<Pds>,
    pub dir: tempfile::TempDir,
    stop: Option<oneshot::Sender<()>>,
    rt: Option<Runtime>,
}

impl Server {
    pub fn start() -> Self {
        Self::with_config(PdsConfig::in_memory(OWNER))
    }

    pub fn with_config(config: PdsConfig) -> Self {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        let pds = Pds::open(config).unwrap();
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let (stop, stopped) = oneshot::channel::<()>();
        rt.spawn(npds_server::serve(listener, pds.clone(), async {
            let _ = stopped.await;
        }));
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("owner.cred"), format!("{OWNER}\n")).unwrap();
        Server { url, pds, dir, stop: Some(stop), rt: Some(rt) }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn owner_cred(&self) -> String {
        self.path("owner.cred").display().to_string()
    }

    /// Runs `npds` against this server with the given arguments.
    pub fn npds(&self, args: &[&str]) -> Run {
        npds(&[&["--server", &self.url], args].concat())
    }

    pub fn owner(&self, args: &[&str]) -> Run {
        self.npds(&[&["--owner-cred", &self.owner_cred()], args].concat())
    }

    pub fn with_token(&self, token: &str, args: &[&str]) -> Run {
        self.npds(&[&["--token", token], args].concat())
    }

    /// Requests, approves and returns a token for `client`.
    pub fn token(&self, client: &str, scopes: &[&str]) -> (String, String) {
        let mut args = vec!["grants", "request", "--client", client];
        for s in scopes {
            args.extend(["--scope", s]);
        }
        let grant = self.npds(&args).ok();
        let id = grant["grant_id"].as_str().unwrap().to_string();
        let decision = self.owner(&["grants", "approve", &id]).ok();
        (id, decision["token"].as_str().unwrap().to_string())
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(rt) = self.rt.take() {
            rt.shutdown_background();
        }
    }
}

#[derive(Debug)]
pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    /// Parsed stdout of a successful run.
    pub fn ok(&self) -> Value {
        assert_eq!(self.code, 0, "stderr: {}", self.stderr);
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("{e}: {}", self.stdout))
    }

    /// Asserts failure and returns stderr.
    pub fn err(&self) -> &str {
        assert_ne!(self.code, 0, "unexpected success: {}", self.stdout);
        &self.stderr
    }
}

pub fn npds(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_npds")).args(args).output().unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

pub fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

/// Spec text in the metadata line format.
pub fn spec_text(lines: &[(&str, &str)]) -> String {
    lines.iter().map(|(k, v)| format!("{k}\t{v}\n")).collect()
}
