//! Run manifests: what ran, with which inputs, and what it wrote.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Result;
use ffreg_core::network::write_atomic;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    /// Started; outputs listed so far are complete files.
    Partial,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector, program name excluded.
    pub args: Vec<String>,
    /// Resolved configuration after file values and flag overrides.
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: Option<u128>,
    pub outputs: Vec<PathBuf>,
    pub status: RunStatus,
    pub error: Option<String>,
}

pub fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str, args: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            args,
            config: serde_json::Value::Null,
            seed: 0,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_ms: unix_ms(),
            finished_unix_ms: None,
            outputs: Vec::new(),
            status: RunStatus::Partial,
            error: None,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())?;
        Ok(())
    }

    pub fn finish(&mut self, dir: &Path, outcome: &Result<()>) -> Result<()> {
        self.finished_unix_ms = Some(unix_ms());
        match outcome {
            Ok(()) => self.status = RunStatus::Complete,
            Err(e) => {
                self.status = RunStatus::Failed;
                self.error = Some(format!("{e:#}"));
            }
        }
        self.write(dir)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
