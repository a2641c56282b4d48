//! Run manifests: every artifact directory gets a manifest sufficient to
//! reproduce it (resolved config, seeds, input hashes, tool version).
//! Manifests carry no timestamps, so identical runs write identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use radcycle_core::{Error as CoreError, Result as CoreResult};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs_sha256: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config_toml: &str) -> Manifest {
        Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_sha256: sha256_hex(config_toml.as_bytes()),
            seeds: BTreeMap::new(),
            inputs_sha256: BTreeMap::new(),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Manifest {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn input_file(mut self, label: &str, path: &Path) -> CoreResult<Manifest> {
        let bytes = std::fs::read(path)
            .map_err(|e| CoreError::Io { path: path.to_path_buf(), source: e })?;
        self.inputs_sha256
            .insert(label.to_string(), sha256_hex(&bytes));
        Ok(self)
    }

    /// Hash over a directory tree: sha256 of the sorted
    /// `relative-path:file-sha256` lines.
    pub fn input_tree(mut self, label: &str, root: &Path) -> CoreResult<Manifest> {
        let mut lines: Vec<String> = Vec::new();
        collect_tree(root, root, &mut lines)?;
        lines.sort();
        self.inputs_sha256
            .insert(label.to_string(), sha256_hex(lines.join("\n").as_bytes()));
        Ok(self)
    }

    pub fn write(&self, dir: &Path) -> CoreResult<()> {
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CoreError::Data(format!("manifest serialization: {e}")))?;
        std::fs::write(&path, json).map_err(|e| CoreError::Io { path, source: e })
    }
}

fn collect_tree(root: &Path, dir: &Path, lines: &mut Vec<String>) -> CoreResult<()> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CoreError::Io { path: dir.to_path_buf(), source: e })?;
    for entry in entries {
        let entry = entry.map_err(|e| CoreError::Io { path: dir.to_path_buf(), source: e })?;
        let path = entry.path();
        if path.is_dir() {
            collect_tree(root, &path, lines)?;
        } else {
            let bytes = std::fs::read(&path)
                .map_err(|e| CoreError::Io { path: path.clone(), source: e })?;
            let rel = path
                .strip_prefix(root)
                .unwrap_or(&path)
                .to_string_lossy()
                .replace('\\', "/");
            lines.push(format!("{rel}:{}", sha256_hex(&bytes)));
        }
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}
