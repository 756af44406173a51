//! Blocking HTTP client for the store's API.

use serde::de::DeserializeOwned;
use serde_json::Value;
use ureq::http::{Method, Request};

use crate::CliError;

/// How the caller proves who they are.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Credential {
    None,
    Token(String),
    Owner(String),
}

impl Credential {
    fn secret(&self) -> Option<&str> {
        match self {
            Credential::None => None,
            Credential::Token(s) | Credential::Owner(s) => Some(s),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    credential: Credential,
    agent: ureq::Agent,
}

impl Client {
    pub fn new(base: &str, credential: Credential) -> Self {
        let config = ureq::Agent::config_builder().http_status_as_error(false).build();
        Client { base: base.trim_end_matches('/').to_string(), credential, agent: ureq::Agent::new_with_config(config) }
    }

    /// Sends one request and returns the status and body, whatever the status.
    pub fn raw(&self, method: Method, path: &str, body: Option<(&str, Vec<u8>)>) -> Result<(u16, Vec<u8>), CliError> {
        let mut request = Request::builder().method(method.clone()).uri(format!("{}{path}", self.base));
        if let Some(secret) = self.credential.secret() {
            request = request.header("authorization", format!("Bearer {secret}"));
        }
        let response = match body {
            Some((content_type, bytes)) => {
                let request = request.header("content-type", content_type).body(bytes).map_err(CliError::http)?;
                self.agent.run(request)
            }
            None if method == Method::GET || method == Method::HEAD => {
                self.agent.run(request.body(()).map_err(CliError::http)?)
            }
            // an explicit empty body, so the server can keep the connection
            None => self.agent.run(request.body(Vec::new()).map_err(CliError::http)?),
        };
        let mut response = response.map_err(CliError::http)?;
        let bytes = response.body_mut().with_config().limit(u64::MAX).read_to_vec().map_err(CliError::http)?;
        Ok((response.status().as_u16(), bytes))
    }

    /// Like [`Client::raw`], but error responses become [`CliError::Api`]
    /// carrying the server's code.
    pub fn send(&self, method: Method, path: &str, body: Option<(&str, Vec<u8>)>) -> Result<Vec<u8>, CliError> {
        let (status, bytes) = self.raw(method, path, body)?;
        if (200..300).contains(&status) {
            return Ok(bytes);
        }
        match serde_json::from_slice::<Value>(&bytes) {
            Ok(body) if body["error"].is_string() => Err(CliError::Api {
                code: body["error"].as_str().unwrap_or_default().to_string(),
                message: body["message"].as_str().unwrap_or_default().to_string(),
            }),
            _ => Err(CliError::Http(format!("HTTP {status}: {}", String::from_utf8_lossy(&bytes)))),
        }
    }

    pub fn json<T: DeserializeOwned>(&self, method: Method, path: &str, body: Option<&Value>) -> Result<T, CliError> {
        let body = body.map(|b| ("application/json", b.to_string().into_bytes()));
        let bytes = self.send(method, path, body)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Http(format!("unreadable response: {e}")))
    }

    pub fn get(&self, path: &str) -> Result<Value, CliError> {
        self.json(Method::GET, path, None)
    }

    pub fn post(&self, path: &str, body: &Value) -> Result<Value, CliError> {
        self.json(Method::POST, path, Some(body))
    }
}
