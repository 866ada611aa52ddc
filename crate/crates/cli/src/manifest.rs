//! Run manifests written next to every artifact.

use std::fs;
use std::path::{Path, PathBuf};

use augex_core::Error;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CmdResult;

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub flags: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<String>,
    pub version: String,
    pub timestamp: String,
}

pub fn sha256_file(path: &Path) -> CmdResult<String> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(sha256_bytes(&bytes))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str, flags: &impl Serialize, seeds: Vec<u64>) -> Self {
        Self {
            command: command.to_owned(),
            flags: serde_json::to_value(flags).unwrap_or(serde_json::Value::Null),
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        }
    }

    pub fn input(mut self, path: &Path) -> CmdResult<Self> {
        self.inputs.push(InputHash {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(self)
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    /// Path of the manifest that accompanies `artifact`.
    pub fn sidecar(artifact: &Path) -> PathBuf {
        let mut name = artifact.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        artifact.with_file_name(name)
    }

    pub fn write(&self, path: &Path) -> CmdResult {
        let text = serde_json::to_string_pretty(self).map_err(Error::from)?;
        write_file(path, &(text + "\n"))
    }

    /// Writes the manifest beside the first output.
    pub fn write_beside_output(&self) -> CmdResult {
        match self.outputs.first() {
            Some(out) => self.write(&Self::sidecar(Path::new(out))),
            None => Ok(()),
        }
    }
}

pub fn write_file(path: &Path, contents: &str) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, contents).map_err(|e| {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

/// Writes to `out` with a sidecar manifest, or prints to stdout.
pub fn emit(out: Option<&Path>, contents: &str, manifest: RunManifest) -> CmdResult {
    match out {
        Some(path) => {
            write_file(path, contents)?;
            manifest.output(path).write_beside_output()
        }
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}
