//! Run manifests: an audit record written next to every command's outputs.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FormatError, FormatResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the subcommand, exactly as given.
    pub flags: Vec<String>,
    pub seeds: Vec<u64>,
    /// Input path -> SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, flags: &[String]) -> Self {
        Self {
            command: command.to_owned(),
            flags: flags.to_vec(),
            seeds: Vec::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
        }
    }

    pub fn input(&mut self, path: &Path) -> FormatResult<()> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&self, path: &Path) -> FormatResult<()> {
        let mut w = crate::formats::create(path)?;
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| FormatError::io(path, e.into()))?;
        w.write_all(b"\n")
            .and_then(|_| w.flush())
            .map_err(|e| FormatError::io(path, e))
    }

    pub fn load(path: &Path) -> FormatResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| FormatError::Header {
            path: path.into(),
            message: e.to_string(),
        })
    }
}

/// Default manifest location for a primary output file.
pub fn default_path(primary_output: &Path) -> PathBuf {
    let mut name = primary_output
        .file_name()
        .unwrap_or_default()
        .to_os_string();
    name.push(".manifest.json");
    primary_output.with_file_name(name)
}

pub fn sha256_file(path: &Path) -> FormatResult<String> {
    let mut f = crate::formats::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| FormatError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// SHA-256 over newline-joined parts.
pub fn fingerprint<S: AsRef<[u8]>>(parts: &[S]) -> String {
    let mut hasher = Sha256::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update(b"\n");
        }
        hasher.update(p.as_ref());
    }
    hex::encode(hasher.finalize())
}
