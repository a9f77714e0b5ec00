//! Run manifests: the resolved configuration, seed and SHA-256 of every
//! input artifact, written before any result.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read, Result};

pub const FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    #[serde(default)]
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read(path)?))
}

impl Manifest {
    pub fn new(command: &str, argv: &[String], seed: u64, config: serde_json::Value) -> Self {
        Self { command: command.into(), argv: argv.to_vec(), seed, config, inputs: BTreeMap::new(), outputs: BTreeMap::new() }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, out_dir: &Path, path: &Path) -> Result<()> {
        let key = path.strip_prefix(out_dir).unwrap_or(path).display().to_string();
        self.outputs.insert(key, hash_file(path)?);
        Ok(())
    }

    /// Digest over the command, config, seed and input hashes; changes
    /// whenever any input changes.
    pub fn fingerprint(&self) -> String {
        let inputs = serde_json::to_string(&(&self.command, &self.config, self.seed, &self.inputs)).expect("manifest serializes");
        sha256_hex(inputs.as_bytes())
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join(FILE);
        let mut v = serde_json::to_value(self).expect("manifest serializes");
        v["fingerprint"] = self.fingerprint().into();
        crate::report::write_json(&path, &v)?;
        Ok(path)
    }
}
