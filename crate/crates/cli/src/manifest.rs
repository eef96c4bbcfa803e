//! Run manifests: what was run, on which bytes, with which resolved config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use lible_core::{BinarizeStrategy, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::{CliResult, Failure};

pub const MANIFEST_SCHEMA: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Aborted,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: Vec<String>,
    /// Argument list that repeats this run, with every setting explicit.
    pub rerun: Vec<String>,
    pub config: TrainConfig,
    pub binarize: BinarizeStrategy,
    pub dataset: DatasetRef,
    pub seed: u64,
    pub outputs: BTreeMap<String, PathBuf>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: Option<u128>,
    pub status: RunStatus,
    pub error: Option<String>,
}

pub fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Failure::output(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Failure::output(path, e))
    }

    pub fn finish(&mut self, status: RunStatus, error: Option<String>, path: &Path) -> CliResult<()> {
        self.status = status;
        self.error = error;
        self.finished_unix_ms = Some(now_ms());
        self.write(path)
    }
}
