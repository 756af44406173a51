//! `npds`: generate synthetic recordings, drive a store's API as its owner
//! or as a client, and demonstrate group aggregation across stores.

pub mod client;
pub mod demo;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use npds_core::recording::{generate_synthetic, parse_recordings, serialize_recording, SyntheticSpec};
use serde_json::{json, Value};
use ureq::http::Method;

use client::{Client, Credential};
use output::Format;

pub const DEFAULT_SERVER: &str = "http://127.0.0.1:8470";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// An error response from the store.
    #[error("{code}: {message}")]
    Api { code: String, message: String },
    /// A failure detected locally, named like the API's codes.
    #[error("{code}: {message}")]
    Local { code: &'static str, message: String },
    #[error("network: {0}")]
    Http(String),
    #[error("io: {0}")]
    Io(String),
    #[error("usage: {0}")]
    Usage(String),
}

impl CliError {
    pub(crate) fn http(e: impl std::fmt::Display) -> Self {
        CliError::Http(e.to_string())
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Api { .. } | CliError::Local { .. } => 1,
            CliError::Usage(_) => 2,
            CliError::Http(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "npds", version, about = "Personal EEG data store command line")]
pub struct Cli {
    /// Base URL of the store.
    #[arg(long, global = true, default_value = DEFAULT_SERVER)]
    pub server: String,
    /// Bearer token issued to a client.
    #[arg(long, global = true, conflicts_with = "owner_cred")]
    pub token: Option<String>,
    /// File holding the owner credential.
    #[arg(long, global = true)]
    pub owner_cred: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic recording described by a spec file.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Upload recording files.
    Upload {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Fetch answers to a question.
    Answers {
        question_id: String,
        #[arg(long)]
        subject: Option<String>,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
    },
    #[command(subcommand)]
    Grants(GrantsCommand),
    #[command(subcommand)]
    Questions(QuestionsCommand),
    /// Run every computation that is due.
    Run,
    /// Show the audit trail.
    Audit {
        #[arg(long, default_value_t = 0)]
        since: u64,
    },
    /// Download every recording into one file.
    Export {
        #[arg(long)]
        out: PathBuf,
    },
    /// Delete recordings and everything derived from them.
    Delete {
        #[arg(long, conflicts_with = "ids")]
        all: bool,
        ids: Vec<String>,
    },
    /// Run an aggregation session over fresh in-process stores.
    DemoAggregate(DemoArgs),
}

#[derive(Debug, Subcommand)]
pub enum GrantsCommand {
    /// List every grant (owner).
    List,
    /// Ask for a grant on behalf of a client.
    Request {
        #[arg(long)]
        client: String,
        #[arg(long = "scope", required = true)]
        scopes: Vec<String>,
    },
    /// Approve a pending grant; prints the issued token (owner).
    Approve { grant_id: String },
    /// Deny a pending grant (owner).
    Deny { grant_id: String },
    /// Revoke a grant (owner).
    Revoke { grant_id: String },
}

#[derive(Debug, Subcommand)]
pub enum QuestionsCommand {
    List,
    /// Install questions from a JSON file holding one question or a list.
    Install { file: PathBuf },
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Number of stores; defaults to the number of supplied values.
    #[arg(long)]
    pub nodes: Option<usize>,
    /// File of numbers, one store each, separated by whitespace or commas.
    #[arg(long, conflicts_with = "values")]
    pub answers: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub values: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

impl Cli {
    pub fn credential(&self) -> Result<Credential, CliError> {
        match (&self.token, &self.owner_cred) {
            (Some(_), Some(_)) => Err(CliError::Usage("--token and --owner-cred are exclusive".into())),
            (Some(token), None) => Ok(Credential::Token(token.clone())),
            (None, Some(path)) => {
                let text = String::from_utf8(read(path)?).map_err(|_| CliError::Usage("owner credential is not text".into()))?;
                Ok(Credential::Owner(text.trim().to_string()))
            }
            (None, None) => Ok(Credential::None),
        }
    }

    fn client(&self) -> Result<Client, CliError> {
        Ok(Client::new(&self.server, self.credential()?))
    }

    /// Executes the command and returns what to print.
    pub fn run(&self) -> Result<Value, CliError> {
        match &self.command {
            Command::Generate { spec, seed, out } => generate(spec, *seed, out),
            Command::Upload { files } => {
                let client = self.client()?;
                let mut receipts = Vec::new();
                for file in files {
                    let bytes = client.send(Method::POST, "/v1/recordings", Some(("application/octet-stream", read(file)?)))?;
                    receipts.push(serde_json::from_slice::<Value>(&bytes).map_err(CliError::http)?);
                }
                Ok(Value::Array(receipts))
            }
            Command::Answers { question_id, subject, from, to } => {
                let query: Vec<(&str, &String)> =
                    [("subject", subject), ("from", from), ("to", to)].into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k, v))).collect();
                let mut path = format!("/v1/answers/{question_id}");
                if !query.is_empty() {
                    path.push('?');
                    path.push_str(&serde_urlencoded::to_string(query).map_err(|e| CliError::Usage(e.to_string()))?);
                }
                self.client()?.get(&path)
            }
            Command::Grants(cmd) => {
                let client = self.client()?;
                match cmd {
                    GrantsCommand::List => client.get("/v1/grants"),
                    GrantsCommand::Request { client: id, scopes } => {
                        client.post("/v1/grants", &json!({"client_id": id, "scopes": scopes}))
                    }
                    GrantsCommand::Approve { grant_id } => {
                        client.post(&format!("/v1/grants/{grant_id}/decision"), &json!({"approve": true}))
                    }
                    GrantsCommand::Deny { grant_id } => {
                        client.post(&format!("/v1/grants/{grant_id}/decision"), &json!({"approve": false}))
                    }
                    GrantsCommand::Revoke { grant_id } => client.json(Method::DELETE, &format!("/v1/grants/{grant_id}"), None),
                }
            }
            Command::Questions(QuestionsCommand::List) => self.client()?.get("/v1/questions"),
            Command::Questions(QuestionsCommand::Install { file }) => {
                let parsed: Value = serde_json::from_slice(&read(file)?)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", file.display())))?;
                let questions = match parsed {
                    Value::Array(list) => list,
                    one => vec![one],
                };
                let client = self.client()?;
                let installed: Result<Vec<Value>, CliError> = questions.iter().map(|q| client.post("/v1/questions", q)).collect();
                Ok(Value::Array(installed?))
            }
            Command::Run => self.client()?.json(Method::POST, "/v1/compute/run", None),
            Command::Audit { since } => self.client()?.get(&format!("/v1/audit?since={since}")),
            Command::Export { out } => {
                let bytes = self.client()?.send(Method::GET, "/v1/recordings/export", None)?;
                let recordings = parse_recordings(&bytes)
                    .map_err(|e| CliError::Local { code: "BadRecording", message: e.to_string() })?;
                write(out, &bytes)?;
                let ids: Vec<&str> = recordings.iter().map(|r| r.id().as_str()).collect();
                Ok(json!({"out": out, "bytes": bytes.len(), "recording_ids": ids}))
            }
            Command::Delete { all, ids } => {
                let body = if *all {
                    json!({"all": true})
                } else if ids.is_empty() {
                    return Err(CliError::Usage("name recordings to delete, or pass --all".into()));
                } else {
                    json!({"recording_ids": ids})
                };
                self.client()?.json(Method::DELETE, "/v1/recordings", Some(&body))
            }
            Command::DemoAggregate(args) => {
                let values = demo_values(args)?;
                let report = demo::demo_aggregate(&values, args.seed)?;
                if !report.verified {
                    let message = format!("unmasked sum {} differs from plaintext {}", report.sum, report.plaintext_sum);
                    return Err(CliError::Local { code: "AggregateMismatch", message });
                }
                serde_json::to_value(report).map_err(CliError::http)
            }
        }
    }
}

fn generate(spec_path: &Path, seed: u64, out: &Path) -> Result<Value, CliError> {
    let text = String::from_utf8(read(spec_path)?).map_err(|_| CliError::Usage("spec file is not text".into()))?;
    let bad = |e: npds_core::recording::RecordingError| CliError::Local { code: "BadSpec", message: e.to_string() };
    let spec = SyntheticSpec::from_spec_text(&text).map_err(bad)?;
    let recording = generate_synthetic(&spec, seed).map_err(bad)?;
    write(out, &serialize_recording(&recording))?;
    Ok(json!({
        "out": out,
        "recording_id": recording.id(),
        "channels": recording.channels().iter().map(|c| c.as_str()).collect::<Vec<_>>(),
        "sample_rate_hz": recording.sample_rate_hz(),
        "sample_count": recording.sample_count(),
        "start_time": recording.start_time(),
    }))
}

fn demo_values(args: &DemoArgs) -> Result<Vec<f64>, CliError> {
    let values = if let Some(path) = &args.answers {
        let text = String::from_utf8(read(path)?).map_err(|_| CliError::Usage("answers file is not text".into()))?;
        text.split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| CliError::Usage(format!("not a number in answers file: {s:?}"))))
            .collect::<Result<Vec<_>, _>>()?
    } else if let Some(values) = &args.values {
        values.clone()
    } else {
        let n = args.nodes.ok_or_else(|| CliError::Usage("give --nodes, --values or --answers".into()))?;
        return Ok(demo::random_values(n, args.seed));
    };
    match args.nodes {
        Some(n) if n != values.len() => Err(CliError::Usage(format!("{n} nodes but {} values", values.len()))),
        _ => Ok(values),
    }
}
