//! One writer per output directory, enforced with an exclusive lock
//! file that is removed when the guard drops.

use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use crown_core::{Error, Result};

pub const LOCK_FILE: &str = ".crown-lock";

pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    /// Creates the directory if needed and claims its lock file
    /// exclusively; fails if another writer holds it.
    pub fn acquire(dir: &Path) -> Result<DirLock> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(Error::invalid(format!(
                "{} is locked by another writer (remove {} if that process is gone)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
