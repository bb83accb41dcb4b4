//! Reproducibility manifest written next to every command's outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(sha256_bytes(&bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub versions: BTreeMap<String, String>,
    /// Path → sha256.
    pub inputs: BTreeMap<String, String>,
    /// Path relative to the output directory → sha256.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        let config_hash = sha256_bytes(config.to_string().as_bytes());
        let mut versions = BTreeMap::new();
        versions.insert("texsg".into(), env!("CARGO_PKG_VERSION").into());
        versions.insert("format".into(), "1".into());
        Self { command: command.into(), config, config_hash, seed, versions, inputs: BTreeMap::new(), outputs: BTreeMap::new() }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Hash every file written under `out`, then write `out/manifest.json`.
    pub fn finish(mut self, out: &Path, written: &[PathBuf]) -> Result<()> {
        for p in written {
            let rel = p.strip_prefix(out).unwrap_or(p);
            self.outputs.insert(rel.display().to_string(), sha256_file(p)?);
        }
        crate::formats::write_json(&out.join("manifest.json"), &self)
    }
}
