//! Run manifests: every subcommand records its resolved configuration and
//! artifact list before doing any work, then stamps the completion time at
//! the end. Nothing touches the file afterwards.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::common::AppError;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub scenario_hash: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub outputs: Vec<String>,
}

pub struct ManifestHandle {
    path: PathBuf,
    manifest: RunManifest,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes the initial manifest (no completion stamp yet) into
/// `out_dir/manifest.json`.
pub fn begin(
    out_dir: &Path,
    subcommand: &str,
    config: serde_json::Value,
    scenario_hash: String,
    seed: u64,
    outputs: Vec<String>,
) -> Result<ManifestHandle, AppError> {
    let manifest = RunManifest {
        subcommand: subcommand.to_string(),
        config,
        scenario_hash,
        seed,
        started_unix: now_unix(),
        finished_unix: None,
        outputs,
    };
    let path = out_dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(ManifestHandle { path, manifest })
}

impl ManifestHandle {
    /// Stamps the completion time and rewrites the manifest one last time.
    pub fn finish(mut self) -> Result<(), AppError> {
        self.manifest.finished_unix = Some(now_unix());
        fs::write(&self.path, serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }
}
