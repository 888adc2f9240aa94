use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const LOCK_FILE: &str = ".lock";

/// An output directory held by one writer. The lock file is removed on drop.
#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    pub fn open(path: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("cannot create {}", path.display()))?;
        let lock = path.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                bail!("{} is locked by another writer (remove {} if stale)", path.display(), lock.display())
            }
            Err(e) => return Err(e).with_context(|| format!("cannot lock {}", path.display())),
        }
        Ok(RunDir { path: path.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write_text(&self, name: &str, text: &str) -> anyhow::Result<PathBuf> {
        let target = self.path.join(name);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&target, text).with_context(|| format!("cannot write {}", target.display()))?;
        Ok(target)
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> anyhow::Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.path.join(LOCK_FILE));
    }
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Seconds since the epoch, or 0 under `--fixed-clock`.
pub fn timestamp(fixed_clock: bool) -> u64 {
    if fixed_clock {
        return 0;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub created_unix: u64,
    pub config_sha256: String,
    /// Asset role → content hash. Paths are left out so that runs from
    /// different checkouts compare equal.
    pub assets: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub settings: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, config_text: &str, fixed_clock: bool) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            created_unix: timestamp(fixed_clock),
            config_sha256: hex::encode(Sha256::digest(config_text.as_bytes())),
            assets: BTreeMap::new(),
            seeds: BTreeMap::new(),
            settings: serde_json::Value::Null,
        }
    }

    pub fn asset(&mut self, role: &str, path: &Path) -> anyhow::Result<()> {
        self.assets.insert(role.into(), sha256_file(path)?);
        Ok(())
    }
}
