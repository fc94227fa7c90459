//! Output-directory handling and the timestamped `run.log`.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{CliError, Result};

pub const RUN_LOG: &str = "run.log";

/// Creates `dir`, refusing to reuse a non-empty one unless `force`, in which
/// case its old contents are removed first.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(CliError::Config(format!("{} exists and is not a directory", dir.display())));
        }
        let non_empty = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?.next().is_some();
        if non_empty {
            if !force {
                return Err(CliError::Config(format!(
                    "output directory {} is not empty (pass --force to replace it)",
                    dir.display()
                )));
            }
            fs::remove_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    write_file(path, text)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Missing(path.display().to_string()),
        _ => CliError::io(path, e),
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Fails with a missing-artifact error when `path` does not exist.
pub fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(path.display().to_string()))
    }
}

/// Append-only log; the only place wall-clock time is written.
pub struct RunLog {
    file: Mutex<File>,
}

impl RunLog {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(RUN_LOG);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| CliError::io(&path, e))?;
        Ok(Self { file: Mutex::new(file) })
    }

    pub fn line(&self, msg: impl AsRef<str>) {
        let t = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        // A failed log write is not worth aborting a run over.
        let _ = writeln!(f, "[{}.{:03}] {}", t.as_secs(), t.subsec_millis(), msg.as_ref());
    }
}
