//! Output directory handling: provenance stamps, content hashes and the
//! lock that keeps two runs out of one directory.

use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const LOCK_FILE: &str = ".afferentsim.lock";

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("output directory {0} is in use by another run (remove {LOCK_FILE} if stale)")]
    Locked(PathBuf),
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_hash: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mesh_hash: Option<String>,
}

impl Provenance {
    pub fn new(command: &'static str, config_hash: String, seed: u64) -> Self {
        Provenance {
            tool: "afferentsim",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_hash,
            seed,
            mesh_hash: None,
        }
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("provenance serializes")
    }

    /// One `# provenance: {...}` comment line.
    pub fn comment(&self) -> String {
        format!("# provenance: {}\n", self.json())
    }
}

/// Held for the duration of a command; removes the lock file on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> anyhow::Result<DirLock> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                Err(OutputError::Locked(dir.to_path_buf()).into())
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Writes through a temporary file so readers never see partial output.
pub fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, &text)
}
