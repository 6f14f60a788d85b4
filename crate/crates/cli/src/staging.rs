//! Outputs are written under a temporary sibling name and renamed into place
//! only once the whole command has succeeded.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub struct Staged {
    tmp: PathBuf,
    dest: PathBuf,
}

impl Staged {
    pub fn new(dest: &Path) -> Result<Self> {
        let name = dest
            .file_name()
            .with_context(|| format!("output path {} has no file name", dest.display()))?;
        let parent = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let tmp = parent.join(format!(".{}.partial-{}", name.to_string_lossy(), std::process::id()));
        remove(&tmp)?;
        Ok(Staged {
            tmp,
            dest: dest.to_path_buf(),
        })
    }

    /// Where the command writes; a file path or a directory to be created.
    pub fn path(&self) -> &Path {
        &self.tmp
    }
}

fn remove(path: &Path) -> std::io::Result<()> {
    match fs::symlink_metadata(path) {
        Ok(m) if m.is_dir() => fs::remove_dir_all(path),
        Ok(_) => fs::remove_file(path),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(e),
    }
}

/// Staged outputs of one command, committed together.
#[derive(Default)]
pub struct Outputs {
    staged: Vec<Staged>,
}

impl Outputs {
    pub fn stage(&mut self, dest: &Path) -> Result<PathBuf> {
        if self.staged.iter().any(|s| s.dest == dest) {
            anyhow::bail!(crate::Invalid(format!("output {} named twice", dest.display())));
        }
        let s = Staged::new(dest)?;
        let p = s.path().to_path_buf();
        self.staged.push(s);
        Ok(p)
    }

    /// Replaces each destination with its staged output.
    pub fn commit(mut self) -> Result<()> {
        for s in self.staged.drain(..) {
            remove(&s.dest).with_context(|| format!("replacing {}", s.dest.display()))?;
            fs::rename(&s.tmp, &s.dest).with_context(|| format!("moving output to {}", s.dest.display()))?;
            log::info!("wrote {}", s.dest.display());
        }
        Ok(())
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        for s in &self.staged {
            if let Err(e) = remove(&s.tmp) {
                log::warn!("could not remove partial output {}: {e}", s.tmp.display());
            }
        }
    }
}
