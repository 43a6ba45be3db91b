//! Output directories are built in a hidden sibling and renamed into place
//! only when complete, so an interrupted command never leaves a partial
//! output directory behind.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::config::RunConfig;

pub struct Staging {
    target: PathBuf,
    dir: PathBuf,
    committed: bool,
}

fn sibling(target: &Path, tag: &str) -> Result<PathBuf> {
    let name = target.file_name().with_context(|| format!("output path {} has no file name", target.display()))?;
    let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    Ok(parent.join(format!(".{}.{tag}", name.to_string_lossy())))
}

impl Staging {
    /// Refuses an existing `target` unless `force` is set.
    pub fn new(target: &Path, force: bool) -> Result<Self> {
        if target.exists() && !force {
            bail!("{} exists; pass --force to replace it", target.display());
        }
        let dir = sibling(target, "partial")?;
        if dir.exists() {
            fs::remove_dir_all(&dir).with_context(|| format!("removing stale {}", dir.display()))?;
        }
        if let Some(parent) = dir.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::create_dir(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { target: target.to_path_buf(), dir, committed: false })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn file(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn subdir(&self, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let p = self.dir.join(rel);
        fs::create_dir_all(&p).with_context(|| format!("creating {}", p.display()))?;
        Ok(p)
    }

    pub fn write(&self, rel: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<()> {
        write_file(&self.dir.join(rel), contents)
    }

    /// Moves the finished directory into place, replacing an old one.
    pub fn commit(mut self) -> Result<PathBuf> {
        if self.target.exists() {
            let old = sibling(&self.target, "old")?;
            if old.exists() {
                fs::remove_dir_all(&old)?;
            }
            fs::rename(&self.target, &old).with_context(|| format!("moving aside {}", self.target.display()))?;
            fs::rename(&self.dir, &self.target).with_context(|| format!("renaming into {}", self.target.display()))?;
            fs::remove_dir_all(&old).with_context(|| format!("removing {}", old.display()))?;
        } else {
            fs::rename(&self.dir, &self.target).with_context(|| format!("renaming into {}", self.target.display()))?;
        }
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Provenance record written next to every output.
#[derive(Debug, Serialize)]
pub struct RunRecord<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config_hash: String,
    pub seed: Option<u64>,
}

/// Writes `run.json` and the merged `config.json` into `dir`.
pub fn write_provenance(dir: &Path, command: &str, config: &RunConfig) -> Result<()> {
    let record = RunRecord {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        config_hash: config.hash(),
        seed: config.seed,
    };
    write_file(&dir.join("run.json"), serde_json::to_string_pretty(&record)? + "\n")?;
    write_file(&dir.join("config.json"), config.pretty_json())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropped_stage_leaves_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let target = tmp.path().join("out");
        {
            let s = Staging::new(&target, false).unwrap();
            s.write("a.txt", "x").unwrap();
        }
        assert!(!target.exists());
        assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
    }

    #[test]
    fn existing_output_needs_force() {
        let tmp = tempfile::tempdir().unwrap();
        let target = tmp.path().join("out");
        let s = Staging::new(&target, false).unwrap();
        s.write("a.txt", "1").unwrap();
        s.commit().unwrap();
        assert!(Staging::new(&target, false).is_err());
        let s = Staging::new(&target, true).unwrap();
        s.write("b.txt", "2").unwrap();
        s.commit().unwrap();
        assert!(!target.join("a.txt").exists());
        assert_eq!(fs::read_to_string(target.join("b.txt")).unwrap(), "2");
        assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);
    }
}
