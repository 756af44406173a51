//! Service configuration, read from a single TOML file.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdsConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    /// Data directory. Without one everything lives in memory.
    #[serde(default)]
    pub storage_path: Option<PathBuf>,
    /// Bearer secret identifying the owner.
    pub owner_credential: String,
    /// Seconds between scheduler sweeps; 0 disables the scheduler.
    #[serde(default = "default_tick")]
    pub schedule_tick_seconds: u64,
    #[serde(default = "default_ttl")]
    pub token_ttl_seconds: u64,
    /// This store's participant id in aggregation sessions.
    #[serde(default = "default_node_id")]
    pub node_id: String,
    #[serde(default = "default_max_upload")]
    pub max_upload_bytes: usize,
    /// Static console bundle served under `/console`.
    #[serde(default)]
    pub console_dir: Option<PathBuf>,
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8470))
}

fn default_tick() -> u64 {
    60
}

fn default_ttl() -> u64 {
    30 * 24 * 3600
}

fn default_node_id() -> String {
    "pds-local".into()
}

fn default_max_upload() -> usize {
    256 << 20
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("bad config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("bad config: {0}")]
    Invalid(String),
}

/// Shortest accepted owner credential.
pub const MIN_CREDENTIAL_LEN: usize = 16;

impl PdsConfig {
    /// In-memory store with defaults, mostly for tests and demos.
    pub fn in_memory(owner_credential: &str) -> Self {
        PdsConfig {
            listen: SocketAddr::from(([127, 0, 0, 1], 0)),
            storage_path: None,
            owner_credential: owner_credential.to_string(),
            schedule_tick_seconds: 0,
            token_ttl_seconds: default_ttl(),
            node_id: default_node_id(),
            max_upload_bytes: default_max_upload(),
            console_dir: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: PdsConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.owner_credential.len() < MIN_CREDENTIAL_LEN {
            return Err(ConfigError::Invalid(format!(
                "owner_credential must be at least {MIN_CREDENTIAL_LEN} characters"
            )));
        }
        if self.node_id.trim().is_empty() {
            return Err(ConfigError::Invalid("node_id is empty".into()));
        }
        if self.token_ttl_seconds == 0 {
            return Err(ConfigError::Invalid("token_ttl_seconds must be positive".into()));
        }
        Ok(())
    }
}
