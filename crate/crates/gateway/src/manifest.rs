//! Run manifests tying an archive to its checkpoint and data.

use crate::error::{GatewayError, Result};
use sdl_core::container::sha256_file;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "run.json";

/// A file with its hex SHA-256. Relative paths resolve against the run
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRef {
    /// Reference to `file`, relative when it lives inside `dir`.
    pub fn of(file: &Path, dir: &Path) -> Result<Self> {
        let abs = file.canonicalize()?;
        let base = dir.canonicalize()?;
        let path = abs.strip_prefix(&base).map(Path::to_path_buf).unwrap_or(abs.clone());
        Ok(Self {
            path,
            sha256: sha256_file(&abs)?,
        })
    }

    pub fn resolve(&self, dir: &Path) -> PathBuf {
        if self.path.is_absolute() {
            self.path.clone()
        } else {
            dir.join(&self.path)
        }
    }

    pub fn check(&self, dir: &Path) -> Result<()> {
        let p = self.resolve(dir);
        if !p.is_file() {
            return Err(GatewayError::NotFound(format!("file {}", p.display())));
        }
        let found = sha256_file(&p)?;
        if found != self.sha256 {
            return Err(GatewayError::Checksum {
                path: p.display().to_string(),
                expected: self.sha256.clone(),
                found,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub checkpoint: FileRef,
    pub archive: FileRef,
    pub dataset: Option<FileRef>,
    /// `(trajectory, step)` of the initial condition in the dataset.
    pub case: Option<(usize, usize)>,
    /// Forecast settings and the configuration they came from.
    pub config: serde_json::Value,
    pub created_unix: u64,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Every reference resolves to a file with the recorded checksum.
    pub fn check(&self, dir: &Path) -> Result<()> {
        self.checkpoint.check(dir)?;
        self.archive.check(dir)?;
        if let Some(d) = &self.dataset {
            d.check(dir)?;
        }
        Ok(())
    }
}
