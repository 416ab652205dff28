use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Everything needed to re-run a command. Contains no timestamps so that
/// repeated runs write identical bytes.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    pub seeds: BTreeMap<String, u64>,
    pub config_hash: String,
    pub config: serde_json::Value,
    /// SHA-256 of every input file.
    pub inputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, args: &[String], config: &impl Serialize) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let canonical = serde_json::to_vec(&config)?;
        Ok(Manifest {
            command: command.to_string(),
            args: args.to_vec(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: BTreeMap::new(),
            config_hash: hex::encode(Sha256::digest(&canonical)),
            config,
            inputs: BTreeMap::new(),
        })
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs
            .insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(self)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
