//! Advisory per-experiment lock: one writer at a time per directory.
//!
//! The lock is a file created with `create_new`, which is atomic on all
//! supported platforms. It holds the owner's PID for diagnostics and is
//! removed when the guard drops. Crash leftovers must be removed by
//! hand; the error message says where.

use std::io::Write;
use std::path::PathBuf;

use aa_core::{Error, Result};

use crate::layout::Layout;

#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(layout: &Layout) -> Result<DirLock> {
        let path = layout.lock();
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut file) => {
                let _ = writeln!(file, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let owner = std::fs::read_to_string(&path).unwrap_or_default();
                Err(Error::config(format!(
                    "experiment directory is locked by process {} ({}); \
                     remove the lock file if that process is gone",
                    owner.trim(),
                    path.display()
                )))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
