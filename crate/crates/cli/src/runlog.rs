//! Append-only JSON-lines log of pipeline runs.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::{CliError, RunConfig};

pub const RUN_LOG: &str = "run_log.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Durations {
    pub total_sec: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLogEntry {
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
    pub stage: String,
    /// Effective configuration after flag overrides.
    pub params: serde_json::Value,
    pub durations: Durations,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunLogEntry {
    pub fn new<T>(stage: &str, cfg: &RunConfig, total_sec: f64, outcome: &Result<T, CliError>) -> Self {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        Self {
            timestamp,
            stage: stage.to_string(),
            params: serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null),
            durations: Durations { total_sec },
            status: if outcome.is_ok() { "ok" } else { "error" }.to_string(),
            error: outcome.as_ref().err().map(|e| e.to_string()),
        }
    }
}

pub fn append(workspace: &Path, entry: &RunLogEntry) -> Result<(), CliError> {
    std::fs::create_dir_all(workspace).map_err(|e| CliError::io(workspace, e))?;
    let path = workspace.join(RUN_LOG);
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| CliError::io(&path, e))?;
    let line = serde_json::to_string(entry)?;
    writeln!(file, "{line}").map_err(|e| CliError::io(&path, e))
}

pub fn read(workspace: &Path) -> Result<Vec<RunLogEntry>, CliError> {
    let path = workspace.join(RUN_LOG);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(CliError::from))
        .collect()
}
