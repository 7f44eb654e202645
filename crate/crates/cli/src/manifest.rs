use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_paths: Vec<String>,
    pub seeds: serde_json::Value,
    /// Resolved settings after flag > config file > default precedence.
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {} for digest", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn digests(paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

impl RunManifest {
    pub fn new(command: &str, started_unix_s: u64) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_paths: Vec::new(),
            seeds: serde_json::Value::Null,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix_s,
            finished_unix_s: started_unix_s,
        }
    }

    pub fn write(mut self, path: &Path, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<()> {
        self.inputs = digests(inputs)?;
        self.outputs = digests(outputs)?;
        self.finished_unix_s = unix_now();
        let mut s = serde_json::to_string_pretty(&self)?;
        s.push('\n');
        fs::write(path, s).with_context(|| format!("writing {}", path.display()))
    }
}
