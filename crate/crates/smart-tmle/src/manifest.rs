//! Run manifest written next to every set of outputs, including failed runs.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::IoError;
use crate::report::write_json;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    /// Pipeline stage or boundary that failed, e.g. `blip` or `input`.
    pub stage: String,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    pub core_version: String,
    pub seed: Option<u64>,
    /// Fully resolved settings after file, environment and flag overrides.
    pub settings: serde_json::Value,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub status: RunStatus,
    pub outputs: Vec<PathBuf>,
    pub error: Option<RunFailure>,
}

impl RunManifest {
    pub fn start(command: &str, args: Vec<String>) -> Self {
        Self {
            command: command.into(),
            args,
            version: env!("CARGO_PKG_VERSION").into(),
            core_version: smart_tmle_core::VERSION.into(),
            seed: None,
            settings: serde_json::Value::Null,
            started_at: Utc::now(),
            finished_at: None,
            status: RunStatus::Running,
            outputs: Vec::new(),
            error: None,
        }
    }

    pub fn succeed(&mut self) {
        self.status = RunStatus::Succeeded;
        self.finished_at = Some(Utc::now());
    }

    pub fn fail(&mut self, stage: &str, kind: &str, message: String) {
        self.status = RunStatus::Failed;
        self.finished_at = Some(Utc::now());
        self.error = Some(RunFailure { stage: stage.into(), kind: kind.into(), message });
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, IoError> {
        let path = dir.join(MANIFEST_FILE);
        write_json(&path, self)?;
        Ok(path)
    }
}
