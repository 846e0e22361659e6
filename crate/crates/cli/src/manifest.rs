//! Per-run manifests: resolved config, input hashes and timings.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use emodetect_core::prompting::{template_hash, TEMPLATE_VERSION};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{CommandKind, RunConfig};
use crate::CliError;

/// SHA-256 over git's blob framing: `"blob <len>\0" + content`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn file_hash(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(content_hash(&bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: CommandKind,
    pub seed: u64,
    pub template_version: u32,
    pub template_hash: String,
    pub started_unix_secs: u64,
    pub config: RunConfig,
    /// Input path -> content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output paths relative to the run directory.
    pub outputs: Vec<String>,
    /// Stage -> wall-clock seconds.
    pub timings: BTreeMap<String, f64>,
}

/// Collects manifest entries while a command runs.
pub struct Recorder {
    manifest: Manifest,
    started: Instant,
}

impl Recorder {
    pub fn new(command: CommandKind, config: &RunConfig) -> Self {
        let started_unix_secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            manifest: Manifest {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                command,
                seed: config.seed,
                template_version: TEMPLATE_VERSION,
                template_hash: template_hash(),
                started_unix_secs,
                config: config.clone(),
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                timings: BTreeMap::new(),
            },
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let hash = file_hash(path)?;
        self.manifest
            .inputs
            .insert(path.display().to_string(), hash);
        Ok(())
    }

    pub fn output(&mut self, rel: impl Into<String>) {
        self.manifest.outputs.push(rel.into());
    }

    /// Runs `f`, adding its duration to `stage`.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        *self.manifest.timings.entry(stage.to_string()).or_default() += t.elapsed().as_secs_f64();
        out
    }

    /// Writes `manifest.json` into `out` and returns the manifest.
    pub fn finish(mut self, out: &Path) -> Result<Manifest, CliError> {
        self.manifest
            .timings
            .insert("total".into(), self.started.elapsed().as_secs_f64());
        let path: PathBuf = out.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(self.manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_uses_blob_framing() {
        // sha256 of "blob 0\0"
        assert_eq!(
            content_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
        assert_ne!(content_hash(b"a"), content_hash(b"b"));
    }
}
