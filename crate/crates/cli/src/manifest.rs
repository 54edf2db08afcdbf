use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Record of one invocation: what went in, what came out, and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub tool_version: String,
    /// Wall-clock creation time; the only field that differs between identical runs.
    pub created_at: String,
    pub config: serde_json::Value,
    pub seeds: serde_json::Value,
    /// Absolute paths of the inputs read.
    pub inputs: Vec<FileDigest>,
    /// Outputs, relative to the directory holding the manifest.
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seeds: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            argv: std::env::args().skip(1).collect(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            config,
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), CliError> {
        let sha256 = digest_file(path)?;
        let abs = fs::canonicalize(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.push(FileDigest { path: abs.display().to_string(), sha256 });
        Ok(())
    }

    pub fn add_output(&mut self, name: &str, bytes: &[u8]) {
        self.outputs.push(FileDigest { path: name.to_string(), sha256: sha256_hex(bytes) });
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(CliError::internal)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
    }

    /// Re-reads an input and checks it still matches its recorded digest.
    pub fn verified_input(&self, index: usize) -> Result<PathBuf, CliError> {
        let entry = self
            .inputs
            .get(index)
            .ok_or_else(|| CliError::validation(format!("manifest lists no input #{index}")))?;
        let path = PathBuf::from(&entry.path);
        let actual = digest_file(&path)?;
        if actual != entry.sha256 {
            return Err(CliError::validation(format!(
                "{}: digest changed since the manifest was written",
                entry.path
            )));
        }
        Ok(path)
    }
}

/// Writes `bytes` to `dir/name` and records it in the manifest.
pub fn emit(manifest: &mut RunManifest, dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    manifest.add_output(name, bytes);
    Ok(())
}

/// Manifest path for a single-file output: `<file>.manifest.json`.
pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
