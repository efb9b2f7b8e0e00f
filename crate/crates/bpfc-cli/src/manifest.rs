//! Run manifests: every run directory gets a manifest tying artifacts to
//! the exact config that produced them. Written atomically on completion.

use anyhow::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub reports: Vec<PathBuf>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>) -> Result<Self> {
        let config_hash = match config_path {
            Some(p) => sha256_file(p)?,
            None => "-".to_string(),
        };
        Ok(RunManifest {
            config_hash,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_path: config_path.map(|p| p.to_path_buf()),
            checkpoints: Vec::new(),
            reports: Vec::new(),
            started_unix: now(),
            finished_unix: 0,
        })
    }

    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished_unix = now();
        std::fs::create_dir_all(dir)?;
        let path = dir.join("manifest.json");
        let tmp = dir.join("manifest.json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(&self)?)?;
        std::fs::rename(&tmp, &path)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex(&Sha256::digest(&bytes)))
}


fn hex(d: &[u8]) -> String {
    d.iter().map(|b| format!("{b:02x}")).collect()
}

fn now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
