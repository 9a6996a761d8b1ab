//! Run directories and their manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Non-config inputs of a command.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    pub checkpoint: Option<PathBuf>,
    pub densities: Option<PathBuf>,
    pub episode_seed: Option<u64>,
    /// Sweep mode, `eval` or `train`.
    pub mode: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub seeds: Vec<u64>,
    pub config: ExperimentConfig,
    pub inputs: Inputs,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// Paths relative to the run directory, sorted.
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// An output directory owned by one command invocation.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Create `root`. An existing non-empty directory is refused unless
    /// `overwrite`, in which case it is cleared first.
    pub fn create(root: &Path, overwrite: bool) -> Result<Self> {
        if root.exists() {
            if !root.is_dir() {
                bail!("{} exists and is not a directory", root.display());
            }
            let occupied = fs::read_dir(root)?.next().is_some();
            if occupied && !overwrite {
                bail!(
                    "{} is not empty; pass --overwrite to replace it",
                    root.display()
                );
            }
            if occupied {
                fs::remove_dir_all(root)?;
            }
        }
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn subdir(&self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        fs::create_dir_all(&p)?;
        Ok(p)
    }

    /// Every file under the root except the manifest, relative and sorted.
    pub fn artifacts(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        let mut stack = vec![self.root.clone()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir)? {
                let p = entry?.path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    let rel = p
                        .strip_prefix(&self.root)?
                        .to_string_lossy()
                        .replace('\\', "/");
                    if rel != MANIFEST_FILE {
                        out.push(rel);
                    }
                }
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn write_manifest(
        &self,
        command: &str,
        config: &ExperimentConfig,
        inputs: &Inputs,
        started_unix: f64,
    ) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: command.into(),
            code_version: format!("isli {}", env!("CARGO_PKG_VERSION")),
            seeds: config.seeds.clone(),
            config: config.clone(),
            inputs: inputs.clone(),
            started_unix,
            finished_unix: unix_now(),
            artifacts: self.artifacts()?,
        };
        fs::write(
            self.path(MANIFEST_FILE),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refuses_to_clobber() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("run");
        let run = RunDir::create(&root, false).unwrap();
        fs::write(run.path("a.csv"), "x").unwrap();
        assert!(RunDir::create(&root, false).is_err());
        assert!(fs::read(root.join("a.csv")).is_ok());
        let run = RunDir::create(&root, true).unwrap();
        assert!(run.artifacts().unwrap().is_empty());
    }

    #[test]
    fn artifacts_are_listed_recursively() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path(), false).unwrap();
        fs::write(run.subdir("s").unwrap().join("b.csv"), "").unwrap();
        fs::write(run.path("a.json"), "").unwrap();
        fs::write(run.path(MANIFEST_FILE), "").unwrap();
        assert_eq!(run.artifacts().unwrap(), vec!["a.json", "s/b.csv"]);
    }
}
