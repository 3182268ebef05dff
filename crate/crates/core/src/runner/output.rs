//! Output directory layout: result files, `summary.json` and `manifest.json`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::config::ExperimentConfig;
use super::experiments::Artifacts;

pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: ExperimentConfig,
    /// SHA-256 of every output file except the manifest, keyed by file name.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| io(path, e))
}

/// Writes the artifacts and the manifest into `dir`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, art: &Artifacts) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut outputs = BTreeMap::new();
    let summary = serde_json::to_vec_pretty(&art.summary).map_err(|e| Error::Serialize(e.to_string()))?;
    for (name, bytes) in art.files.iter().map(|(n, b)| (n.as_str(), b.as_slice())).chain([(SUMMARY, summary.as_slice())]) {
        write(&dir.join(name), bytes)?;
        outputs.insert(name.to_string(), sha256_hex(bytes));
    }
    let manifest = Manifest { version: env!("CARGO_PKG_VERSION").to_string(), config: cfg.clone(), outputs };
    let body = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Serialize(e.to_string()))?;
    write(&dir.join(MANIFEST), &body)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config { field: "manifest".into(), reason: e.to_string() })
}
