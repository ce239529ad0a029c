use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use twinfalsify::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    /// File name only, so manifests do not depend on the output directory.
    pub name: String,
    pub sha256: String,
}

/// Record of everything that determined a command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub parameters: BTreeMap<String, Value>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Seconds since the epoch from `SOURCE_DATE_EPOCH`; null when unset so
    /// reruns stay byte-identical.
    pub timestamp: Option<u64>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn digest(path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        name: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        sha256: sha256_file(path)?,
    })
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: u64) -> Self {
        ManifestBuilder {
            manifest: RunManifest {
                tool: "twinfalsify",
                version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                seed,
                parameters: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                timestamp: std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()),
            },
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.manifest.parameters.insert(key.to_string(), v);
        self
    }

    pub fn input(&mut self, path: impl Into<PathBuf>) -> &mut Self {
        self.inputs.push(path.into());
        self
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) -> &mut Self {
        self.outputs.push(path.into());
        self
    }

    /// Hashes every registered file and writes the manifest to `path`.
    pub fn write(&mut self, path: &Path) -> Result<()> {
        self.manifest.inputs = self.inputs.iter().map(|p| digest(p)).collect::<Result<_>>()?;
        self.manifest.outputs = self.outputs.iter().map(|p| digest(p)).collect::<Result<_>>()?;
        write_json(path, &self.manifest)
    }
}

pub fn manifest_name(command: &str) -> String {
    format!("manifest-{command}.json")
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
