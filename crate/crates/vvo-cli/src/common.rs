//! Shared plumbing for the subcommands: error-to-exit-code mapping,
//! scenario loading, and output-directory handling.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use vvo_core::env::{EnvConfig, VvoEnv};
use vvo_core::model::{load_network, FeederNetwork};
use vvo_core::profile::ExogenousProfile;

/// Errors split by exit code: usage/validation problems exit 2, everything
/// else exits 1.
#[derive(Debug)]
pub enum AppError {
    Usage(String),
    Internal(anyhow::Error),
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AppError::Usage(m) => write!(f, "{m}"),
            AppError::Internal(e) => write!(f, "{e:#}"),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for AppError {
    fn from(e: E) -> Self {
        AppError::Internal(e.into())
    }
}

pub fn usage(msg: impl Into<String>) -> AppError {
    AppError::Usage(msg.into())
}

/// Loads a scenario file, reporting the offending path on failure.
pub fn load_scenario(path: &Path) -> Result<FeederNetwork, AppError> {
    load_network(path)
        .map_err(|e| usage(format!("cannot load scenario {}: {e}", path.display())))
}

/// Hash of the scenario file bytes, recorded in run manifests.
pub fn scenario_hash(path: &Path) -> Result<String, AppError> {
    let bytes = fs::read(path)
        .map_err(|e| usage(format!("cannot read scenario {}: {e}", path.display())))?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    Ok(hex)
}

pub fn ensure_out_dir(path: &Path) -> Result<(), AppError> {
    fs::create_dir_all(path)
        .map_err(|e| AppError::Internal(anyhow::anyhow!("cannot create {}: {e}", path.display())))
}

pub fn build_env(net: Arc<FeederNetwork>, profile_seed: u64) -> VvoEnv {
    let profile = Arc::new(ExogenousProfile::new(profile_seed));
    VvoEnv::new(net, profile, EnvConfig::default())
}

/// Effective worker count after the `VVO_THREADS` cap.
pub fn cap_workers(requested: usize) -> usize {
    match std::env::var("VVO_THREADS") {
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => requested.min(n),
            _ => requested,
        },
        Err(_) => requested,
    }
}

/// Applies `VVO_THREADS` to the rayon pool used by placement scoring.
/// Harmless if the pool was already initialized.
pub fn configure_thread_pool() {
    if let Ok(v) = std::env::var("VVO_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

pub fn path_str(path: &Path) -> String {
    path.display().to_string()
}
