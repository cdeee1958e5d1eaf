use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::jobs::Job;
use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Record of one invocation, written into its run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved job; enough to rerun without the original flags or files.
    pub job: Job,
    pub seed: Option<u64>,
    pub threads: usize,
    pub started_at: String,
    pub finished_at: String,
    pub git_describe: String,
    pub version: String,
    pub outputs: Vec<PathBuf>,
    pub status: String,
    pub exit_code: i32,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| prcnn::Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| prcnn::Error::format(path, e.to_string()).into())
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(self).map_err(prcnn::Error::from)?;
        fs::write(&path, text + "\n").map_err(|e| prcnn::Error::io(&path, e).into())
    }
}

pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Creates a fresh run directory; an existing non-empty one is refused.
pub fn claim_run_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| prcnn::Error::io(dir, e))?;
        if entries.next().is_some() {
            return Err(CliError::Usage(format!(
                "run directory {} already exists and is not empty; refusing to overwrite",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| prcnn::Error::io(dir, e).into())
}
