//! Run metadata: the JSON manifest and the flat re-run config file.
//!
//! Every command writes a `manifest.json` describing the run (tool
//! version, command, full configuration, input checksum, outputs) and a
//! `run.cfg` with the flat `key=value` configuration. Feeding `run.cfg`
//! back through `--config` reproduces the outputs bit-exactly; only the
//! manifest timestamp differs between such runs.

use crate::error::{CliError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

/// Checksum and origin of one input file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputRecord {
    /// The path as given on the command line.
    pub path: String,
    /// SHA-256 of the raw bytes, hex encoded.
    pub sha256: String,
}

/// Everything needed to audit or reproduce a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Tool name.
    pub tool: String,
    /// Tool version.
    pub version: String,
    /// Subcommand that ran.
    pub command: String,
    /// Random generator family used for all seeded draws.
    pub rng: String,
    /// Seconds since the Unix epoch at write time (not part of the
    /// reproducible output set).
    pub created_unix: u64,
    /// Input files with checksums.
    pub inputs: Vec<InputRecord>,
    /// Files the run wrote, relative to the output directory.
    pub outputs: Vec<String>,
    /// Flat configuration, identical to `run.cfg`.
    pub config: BTreeMap<String, String>,
}

impl RunManifest {
    /// A manifest for `command` with the given configuration.
    pub fn new(command: &str, config: BTreeMap<String, String>) -> Self {
        RunManifest {
            tool: "mipca".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            rng: "ChaCha8".to_string(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config,
        }
    }

    /// Records an input file and its checksum.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256: hex(&Sha256::digest(&bytes)),
        });
        Ok(())
    }

    /// Records an output file name.
    pub fn add_output(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    /// Writes `manifest.json` and `run.cfg` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let manifest_path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self)
            .expect("manifest serialization cannot fail");
        fs::write(&manifest_path, json + "\n").map_err(|source| CliError::Io {
            path: manifest_path,
            source,
        })?;

        let cfg_path = dir.join("run.cfg");
        let mut cfg = String::new();
        for (key, value) in &self.config {
            cfg.push_str(&format!("{key}={value}\n"));
        }
        fs::write(&cfg_path, cfg).map_err(|source| CliError::Io {
            path: cfg_path,
            source,
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads a flat `key=value` config file (blank lines and `#` comments
/// are ignored).
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut map = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((key, value)) => {
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
            None => {
                return Err(CliError::usage(format!(
                    "{}: line {}: expected key=value, found {line:?}",
                    path.display(),
                    idx + 1
                )));
            }
        }
    }
    Ok(map)
}
