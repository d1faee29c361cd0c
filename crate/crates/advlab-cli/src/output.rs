//! Exit-code carrying errors and atomic file writes.

use std::fmt;
use std::fs;
use std::path::Path;

/// CLI failure with the exit code it maps to: 2 for input and config
/// problems, 3 for artifact and compatibility problems.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Artifact(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn artifact(msg: impl Into<String>) -> Self {
        CliError::Artifact(msg.into())
    }

    pub fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Artifact(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Artifact(m) => m,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.message())
    }
}

impl std::error::Error for CliError {}

/// Write through a temp file in the same directory, then rename into place,
/// so a crash mid-write never leaves a truncated file at `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| {
            CliError::artifact(format!("cannot create {}: {e}", dir.display()))
        })?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".{}.tmp", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes)
        .map_err(|e| CliError::artifact(format!("cannot write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::artifact(format!("cannot finalize {}: {e}", path.display()))
    })
}
