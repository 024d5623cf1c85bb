//! Output directory handling and run manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Writes files atomically into one directory and remembers what it wrote.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("cannot create output directory {}", root.display()))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let contents = contents.as_ref();
        let target = self.root.join(name);
        write_atomic(&target, contents)?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileEntry {
            path: name.to_string(),
            bytes: contents.len(),
            sha256: sha256_hex(contents),
        });
        log::info!("wrote {}", target.display());
        Ok(target)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }
}

pub fn write_atomic(target: &Path, contents: &[u8]) -> Result<()> {
    let dir = target.parent().unwrap_or_else(|| Path::new("."));
    let name = target.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("cannot create {}", tmp.display()))?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, target).with_context(|| format!("cannot move {} into place", target.display()))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Seeds {
    pub cv: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulate: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InputFingerprint {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seeds: Seeds,
    pub input: Option<InputFingerprint>,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config_hash: String,
        seeds: Seeds,
        input: Option<InputFingerprint>,
        started: DateTime<Utc>,
        files: &[FileEntry],
    ) -> Self {
        RunManifest {
            command: command.to_string(),
            config_hash,
            seeds,
            input,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: started.to_rfc3339_opts(SecondsFormat::Millis, true),
            finished_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            files: files.to_vec(),
        }
    }
}

pub fn fingerprint(path: &Path) -> Result<InputFingerprint> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(InputFingerprint {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.write("a.csv", "x\n").unwrap();
        out.write("a.csv", "y\n").unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("a.csv")).unwrap(), "y\n");
        assert_eq!(out.files().len(), 1);
        assert_eq!(out.files()[0].sha256, sha256_hex(b"y\n"));
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().ends_with(".tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }
}
