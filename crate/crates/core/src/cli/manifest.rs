use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Outcome;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
    pub rows: usize,
    pub columns: usize,
}

/// Everything needed to reproduce a run. Wall-clock fields are the only
/// ones that change between identical invocations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputRecord>,
    pub artifacts: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub warnings: Vec<String>,
    pub threads: usize,
    pub started_unix_seconds: u64,
    pub elapsed_seconds: f64,
}

impl RunManifest {
    pub fn start(command: &str, threads: usize) -> Self {
        let started = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            seeds: BTreeMap::new(),
            warnings: Vec::new(),
            threads,
            started_unix_seconds: started,
            elapsed_seconds: 0.0,
        }
    }

    pub fn add_input(&mut self, path: &Path, bytes: &[u8], rows: usize, columns: usize) {
        let digest = Sha256::digest(bytes);
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            rows,
            columns,
        });
    }

    pub(super) fn finish(&mut self, elapsed: f64, outcome: &Outcome) {
        self.elapsed_seconds = elapsed;
        self.artifacts = outcome
            .artifacts
            .iter()
            .map(|p| p.display().to_string())
            .collect();
        self.warnings = outcome.warnings.clone();
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
