//! Run manifests recording what produced a set of output files.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Hex SHA-256 of raw bytes.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the configuration bytes as read from disk.
    pub config_digest: String,
    pub seed: Option<u64>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub version: String,
    /// Free-form settings worth recording next to the outputs.
    #[serde(default)]
    pub notes: Vec<String>,
    /// Digests of the files written, by name.
    #[serde(default)]
    pub outputs: Vec<(String, String)>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn start(command: &str, config_bytes: &[u8], seed: Option<u64>) -> Self {
        let t = now();
        Self {
            command: command.to_string(),
            config_digest: digest(config_bytes),
            seed,
            started_unix: t,
            finished_unix: t,
            version: format!("facreg {}", env!("CARGO_PKG_VERSION")),
            notes: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn record_output(&mut self, name: &str, bytes: &[u8]) {
        self.outputs.push((name.to_string(), digest(bytes)));
    }

    pub fn finish(mut self) -> Self {
        self.finished_unix = now();
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
