//! Multi-store aggregation demo: several in-process stores serve the API on
//! loopback ports and one aggregator collects masked shares from all of them.

use std::sync::Arc;

use npds_core::aggregate::{encode_fixed, AggregateError, AggregationSession, MaskedShare, SessionSpec, SCALE, SCALE_BITS};
use npds_core::questions::Subject;
use npds_server::{Pds, PdsConfig};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use tokio::runtime::Runtime;
use tokio::sync::oneshot;

use crate::client::{Client, Credential};
use crate::CliError;

pub const QUESTION_ID: &str = "drowsiness_index";
pub const FIELD: &str = "ratio";
const AGGREGATOR: &str = "demo-aggregator";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoReport {
    pub session_id: String,
    pub participants: Vec<String>,
    pub sum: f64,
    pub mean: f64,
    /// Sum of the fixed-point encoded inputs, computed in the clear.
    pub plaintext_sum: f64,
    pub verified: bool,
}

struct Node {
    pds: Arc<Pds>,
    url: String,
    owner: String,
    stop: Option<oneshot::Sender<()>>,
}

impl Node {
    fn owner(&self) -> Client {
        Client::new(&self.url, Credential::Owner(self.owner.clone()))
    }
}

fn aggregate_error(e: AggregateError) -> CliError {
    let code = match e {
        AggregateError::RangeExceeded { .. } => "RangeExceeded",
        AggregateError::MinimumGroupSize { .. } => "MinimumGroupSize",
        AggregateError::MissingShare(_) => "MissingShare",
        AggregateError::DuplicateShare(_) => "DuplicateShare",
        AggregateError::UnknownParticipant(_) => "UnknownParticipant",
        AggregateError::SessionMismatch => "SessionMismatch",
        AggregateError::InvalidSession(_) => "InvalidSession",
    };
    CliError::Local { code, message: e.to_string() }
}

/// `n` values drawn uniformly from [-100, 100].
pub fn random_values(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-100.0..=100.0)).collect()
}

/// Exact sum of the encoded inputs.
pub fn plaintext_sum(values: &[f64]) -> Result<f64, CliError> {
    let mut total: i128 = 0;
    for v in values {
        total += encode_fixed(*v).map_err(aggregate_error)? as i64 as i128;
    }
    Ok(total as f64 / SCALE)
}

fn start_node(rt: &Runtime, index: usize, value: f64, rng: &mut ChaCha8Rng) -> Result<Node, CliError> {
    let mut secret = [0u8; 32];
    rng.fill_bytes(&mut secret);
    let owner = hex::encode(secret);
    let mut config = PdsConfig::in_memory(&owner);
    config.node_id = format!("node-{index}");
    let pds = Pds::open(config).map_err(|e| CliError::Io(e.to_string()))?;
    let listener = rt
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .map_err(|e| CliError::Io(e.to_string()))?;
    let url = format!("http://{}", listener.local_addr().map_err(|e| CliError::Io(e.to_string()))?);
    let (stop, stopped) = oneshot::channel::<()>();
    rt.spawn(npds_server::serve(listener, pds.clone(), async {
        let _ = stopped.await;
    }));
    let node = Node { pds, url, owner, stop: Some(stop) };

    node.owner().post(
        "/v1/questions",
        &json!({
            "question_id": QUESTION_ID, "inputs": ["RAW"], "params": {}, "output_schema_id": "drowsiness",
            "schedule_period_seconds": 3600, "required_scope": "q:drowsiness",
        }),
    )?;
    // the owner imports this store's answer directly
    let now = node.pds.now();
    node.pds
        .engine()
        .put_answer(QUESTION_ID, Subject::Window { start: now, end: now }, json!({"p4": value, "p14": 1.0, FIELD: value}), now, None)
        .map_err(|e| CliError::Local { code: "BadAnswer", message: e.to_string() })?;
    Ok(node)
}

/// The aggregator asks every store for a participation grant and each owner
/// approves it; returns one token per store.
fn enrol(nodes: &[Node]) -> Result<Vec<String>, CliError> {
    let mut tokens = Vec::new();
    for node in nodes {
        let anonymous = Client::new(&node.url, Credential::None);
        let grant = anonymous.post("/v1/grants", &json!({"client_id": AGGREGATOR, "scopes": ["aggregate:participate"]}))?;
        let id = grant["grant_id"].as_str().unwrap_or_default();
        let decision = node.owner().post(&format!("/v1/grants/{id}/decision"), &json!({"approve": true}))?;
        tokens.push(decision["token"].as_str().unwrap_or_default().to_string());
    }
    Ok(tokens)
}

/// Runs one full session over `values.len()` fresh stores, node `i`
/// holding `values[i]`, and checks the unmasked sum against the plaintext.
pub fn demo_aggregate(values: &[f64], seed: u64) -> Result<DemoReport, CliError> {
    let participants: Vec<String> = (0..values.len()).map(|i| format!("node-{i}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = SessionSpec {
        session_id: format!("demo-{:016x}", rng.next_u64()),
        question_id: QUESTION_ID.into(),
        field: FIELD.into(),
        participants: participants.clone(),
    };
    spec.validate().map_err(aggregate_error)?;
    let plaintext = plaintext_sum(values)?;

    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    let mut nodes = Vec::new();
    for (i, value) in values.iter().enumerate() {
        nodes.push(start_node(&rt, i, *value, &mut rng)?);
    }
    let result = run_session(&nodes, &spec, &mut rng);
    for node in &mut nodes {
        if let Some(stop) = node.stop.take() {
            let _ = stop.send(());
        }
    }
    rt.shutdown_background();

    let result = result?;
    Ok(DemoReport {
        session_id: spec.session_id,
        participants,
        sum: result.sum,
        mean: result.mean,
        plaintext_sum: plaintext,
        verified: result.sum == plaintext,
    })
}

fn run_session(
    nodes: &[Node],
    spec: &SessionSpec,
    rng: &mut ChaCha8Rng,
) -> Result<npds_core::aggregate::AggregateResult, CliError> {
    // pairwise seeds, provisioned by the owners out of band
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            let mut seed = [0u8; 32];
            rng.fill_bytes(&mut seed);
            let secret = hex::encode(seed);
            for (me, peer) in [(i, j), (j, i)] {
                let body = json!({"peer_id": spec.participants[peer], "secret": secret});
                nodes[me].owner().post("/v1/aggregate/peers", &body)?;
            }
        }
    }
    let tokens = enrol(nodes)?;
    let open = json!({
        "session_id": spec.session_id, "question_id": spec.question_id, "field": spec.field,
        "participants": spec.participants, "participants_hash": spec.participants_hash(), "scale": 1u64 << SCALE_BITS,
    });
    let contribute = format!("/v1/aggregate/sessions/{}/contribute", spec.session_id);
    let shares: Vec<Result<MaskedShare, CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = nodes
            .iter()
            .zip(&tokens)
            .map(|(node, token)| {
                let client = Client::new(&node.url, Credential::Token(token.clone()));
                let (open, contribute) = (&open, &contribute);
                scope.spawn(move || {
                    client.post("/v1/aggregate/sessions", open)?;
                    let body: Value = json!({"participants_hash": open["participants_hash"]});
                    let share = client.post(contribute, &body)?;
                    serde_json::from_value(share).map_err(|e| CliError::Http(format!("bad share: {e}")))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("contributor thread panicked")).collect()
    });

    let mut session = AggregationSession::new(spec.clone()).map_err(aggregate_error)?;
    session.start_collecting();
    for share in shares {
        session.add_share(share?).map_err(aggregate_error)?;
    }
    session.finish().map_err(aggregate_error)
}
