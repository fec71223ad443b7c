use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::harness::sha256_file;
use super::scene::SceneSpec;
use crate::{Error, Result};

pub const MANIFEST_FORMAT: &str = "dav-run v1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Path relative to the run directory.
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to regenerate a run bit-exactly: the resolved scene
/// (which carries the seed), the checkpoint and its hash, plus what was
/// written and how it scored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub scene: SceneSpec,
    pub checkpoint: PathBuf,
    pub checkpoint_sha256: String,
    pub seed: u64,
    pub outputs: Vec<OutputRecord>,
    pub metrics: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!("manifest format {:?}, expected {MANIFEST_FORMAT:?}", m.format),
            });
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Records `path` (inside `dir`) with its hash.
    pub fn record_output(&mut self, dir: &Path, path: &Path) -> Result<()> {
        let rel = path.strip_prefix(dir).unwrap_or(path).to_path_buf();
        self.outputs.push(OutputRecord {
            path: rel,
            sha256: sha256_file(path)?,
        });
        Ok(())
    }
}

/// Tracks files a command creates so they can be removed if it fails.
/// Call [`OutputGuard::commit`] once everything has been written.
pub struct OutputGuard {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<PathBuf>,
    subdirs: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    pub fn new(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            files: Vec::new(),
            subdirs: Vec::new(),
            committed: false,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Path of a file inside the output directory, registered for cleanup.
    pub fn file(&mut self, name: impl AsRef<Path>) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    /// Creates a subdirectory, registered for cleanup if it is new.
    pub fn subdir(&mut self, name: impl AsRef<Path>) -> Result<PathBuf> {
        let p = self.dir.join(name);
        if !p.exists() {
            std::fs::create_dir_all(&p)?;
            self.subdirs.push(p.clone());
        }
        Ok(p)
    }

    pub fn track(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        self.files.extend(paths);
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = std::fs::remove_file(f);
        }
        for d in self.subdirs.iter().rev() {
            let _ = std::fs::remove_dir_all(d);
        }
        if self.created_dir {
            let _ = std::fs::remove_dir_all(&self.dir);
        }
    }
}
