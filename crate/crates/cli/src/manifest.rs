//! Run manifests: command, inputs, seed and a SHA-256 per output file.

use std::path::{Path, PathBuf};

use evplab::error::io_err;
use evplab::Result;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: &'static str,
    pub version: &'static str,
    pub inputs: Vec<String>,
    pub seed: Option<u64>,
    pub outputs: Vec<OutputEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn new(command: &'static str, inputs: Vec<PathBuf>, seed: Option<u64>) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            seed,
            outputs: Vec::new(),
        }
    }

    pub fn add(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        self.outputs.push(OutputEntry {
            path: name,
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    /// Writes `manifest.json` into `dir`.
    pub fn write_in(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST_NAME), self)
    }

    /// Writes `<file>.manifest.json` next to a single output file.
    pub fn write_beside(&self, file: &Path) -> Result<()> {
        let mut name = file.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        write_json(&file.with_file_name(name), self)
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, v: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(v)?;
    text.push(b'\n');
    write_file(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}
