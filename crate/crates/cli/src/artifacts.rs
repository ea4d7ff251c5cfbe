//! Output directories, staged and renamed into place, plus the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const TOOL: &str = "ghyp";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", path.display())))
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::runtime("output", format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<serde_json::Value>,
}

/// Files collected in memory and written under `<root>/<name>` in one
/// rename, so a reader never sees a partial directory.
pub struct Staged {
    root: PathBuf,
    name: String,
    files: Vec<(String, Vec<u8>)>,
}

impl Staged {
    pub fn new(root: &Path, name: String) -> Self {
        Self {
            root: root.to_path_buf(),
            name,
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, file: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((file.to_string(), bytes.into()));
    }

    pub fn digests(&self) -> Vec<FileDigest> {
        self.files
            .iter()
            .map(|(f, b)| FileDigest {
                path: f.clone(),
                sha256: sha256_hex(b),
            })
            .collect()
    }

    /// Writes everything to a temporary sibling and renames it over the
    /// final directory. Returns the final path.
    pub fn commit(self) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.root).map_err(|e| io(&self.root, e))?;
        let tmp = self
            .root
            .join(format!(".{}.tmp-{}", self.name, std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| io(&tmp, e))?;
        }
        fs::create_dir(&tmp).map_err(|e| io(&tmp, e))?;
        let written = (|| {
            for (f, b) in &self.files {
                let p = tmp.join(f);
                fs::write(&p, b).map_err(|e| io(&p, e))?;
            }
            let dest = self.root.join(&self.name);
            if dest.exists() {
                fs::remove_dir_all(&dest).map_err(|e| io(&dest, e))?;
            }
            fs::rename(&tmp, &dest).map_err(|e| io(&dest, e))?;
            Ok(dest)
        })();
        if written.is_err() {
            let _ = fs::remove_dir_all(&tmp);
        }
        written
    }
}

/// SHA-256 of `parts` joined by newlines.
pub fn config_hash(parts: &[&str]) -> String {
    sha256_hex(parts.join("\n").as_bytes())
}
