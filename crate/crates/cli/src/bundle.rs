//! Buffered outputs and the run manifest.
//!
//! Commands stage every output in memory and write nothing until the
//! analysis has succeeded, so a failed run leaves no partial files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FileDigest {
    pub role: String,
    /// File name only, so manifests from different directories compare equal.
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub summary: Value,
    pub notes: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Inputs read during a run, with their digests.
#[derive(Debug, Default)]
pub struct Inputs {
    pub digests: Vec<FileDigest>,
}

impl Inputs {
    pub fn read(&mut self, role: &str, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).with_context(|| format!("reading {role} file {}", path.display()))?;
        self.digests.push(FileDigest {
            role: role.to_string(),
            file: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            bytes: bytes.len(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }
}

#[derive(Debug, Default)]
pub struct Bundle {
    files: Vec<(String, Vec<u8>)>,
    pub notes: Vec<String>,
    pub summary: Value,
}

impl Bundle {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, name: impl Into<String>, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    /// Writes every staged file and then the manifest.
    pub fn commit(self, out: &Path, command: &str, seed: Option<u64>, config: Value, inputs: Inputs) -> Result<PathBuf> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let mut outputs = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let path = out.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            outputs.push(FileDigest { role: "output".into(), file: name.clone(), bytes: bytes.len(), sha256: sha256_hex(bytes) });
        }
        let manifest = Manifest {
            tool: "survmark",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            config,
            inputs: inputs.digests,
            outputs,
            summary: self.summary,
            notes: self.notes,
        };
        let path = out.join(MANIFEST);
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
