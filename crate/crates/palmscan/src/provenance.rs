//! Stage output staging and provenance sidecars.
//!
//! A stage writes into a private staging directory next to its output
//! directory. On success every file is renamed into place together with a
//! `<file>.prov.json` sidecar; if the stage fails, or the [`Staging`] value
//! is dropped uncommitted, the staging directory is removed.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::fsutil::{sha256_file, write_atomic};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(FileDigest { path: path.display().to_string(), sha256: sha256_file(path)? })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub stage: String,
    pub version: &'static str,
    pub params: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Provenance {
    pub fn new(stage: &str, params: &impl Serialize, seed: Option<u64>) -> Result<Self> {
        Ok(Provenance {
            stage: stage.to_string(),
            version: VERSION,
            params: serde_json::to_value(params)?,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn inputs<'a>(&mut self, paths: impl IntoIterator<Item = &'a Path>) -> Result<()> {
        paths.into_iter().try_for_each(|p| self.input(p))
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".prov.json");
    path.with_file_name(name)
}

pub struct Staging {
    final_dir: PathBuf,
    dir: PathBuf,
    /// Relative names and whether each gets a sidecar.
    files: Vec<(String, bool)>,
    committed: bool,
}

impl Staging {
    pub fn new(final_dir: &Path, stage: &str) -> Result<Self> {
        fs::create_dir_all(final_dir).with_context(|| format!("creating {}", final_dir.display()))?;
        let dir = final_dir.join(format!(".staging-{stage}-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Staging { final_dir: final_dir.to_path_buf(), dir, files: Vec::new(), committed: false })
    }

    fn register(&mut self, name: &str, sidecar: bool) -> PathBuf {
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            let _ = fs::create_dir_all(parent);
        }
        if !self.files.iter().any(|(n, _)| n == name) {
            self.files.push((name.to_string(), sidecar));
        }
        p
    }

    /// Staging path of a primary output (raster, CSV, JSON) that gets a
    /// provenance sidecar.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.register(name, true)
    }

    /// Staging path of a bulk data file covered by another output's sidecar.
    pub fn data(&mut self, name: &str) -> PathBuf {
        self.register(name, false)
    }

    pub fn final_path(&self, name: &str) -> PathBuf {
        self.final_dir.join(name)
    }

    /// Digests every output, writes sidecars and moves all files into the
    /// output directory. Returns the final paths of the primary outputs.
    pub fn commit(mut self, mut prov: Provenance) -> Result<Vec<PathBuf>> {
        prov.outputs.clear();
        for (name, sidecar) in &self.files {
            if *sidecar {
                let digest = sha256_file(&self.dir.join(name))?;
                prov.outputs.push(FileDigest { path: name.clone(), sha256: digest });
            }
        }
        let mut json = serde_json::to_string_pretty(&prov)?;
        json.push('\n');
        let mut primary = Vec::new();
        for (name, sidecar) in &self.files {
            let from = self.dir.join(name);
            let to = self.final_dir.join(name);
            if let Some(parent) = to.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::rename(&from, &to).with_context(|| format!("moving {} into place", to.display()))?;
            if *sidecar {
                write_atomic(&sidecar_path(&to), json.as_bytes())?;
                primary.push(to);
            }
        }
        self.committed = true;
        let _ = fs::remove_dir_all(&self.dir);
        Ok(primary)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}
