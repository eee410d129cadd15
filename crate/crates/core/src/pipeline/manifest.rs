//! Record of completed stages and their checksummed artifacts.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::digest::file_sha256;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".chest.lock";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Hash of the stage's configuration and upstream keys.
    pub key: String,
    pub started: u64,
    pub finished: u64,
    pub artifacts: BTreeMap<String, Artifact>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn load_or_new(out: &Path) -> Result<Self> {
        let path = out.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        let path = out.join(MANIFEST_FILE);
        let tmp = out.join(format!("{MANIFEST_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    /// Whether `stage` completed with `key` and its artifacts are unchanged.
    pub fn is_current(&self, out: &Path, stage: &str, key: &str) -> bool {
        let Some(rec) = self.stages.get(stage) else {
            return false;
        };
        if rec.key != key {
            return false;
        }
        rec.artifacts.values().all(|a| {
            let ok = file_sha256(&out.join(&a.path)).is_ok_and(|h| h == a.sha256);
            if !ok {
                warn!("artifact {} of stage {stage} is missing or modified", a.path);
            }
            ok
        })
    }

    pub fn artifact(&self, out: &Path, stage: &str, name: &str) -> Option<PathBuf> {
        self.stages.get(stage)?.artifacts.get(name).map(|a| out.join(&a.path))
    }
}

/// Checksum artifacts written under `out`.
pub fn checksum_artifacts(out: &Path, files: &[(String, PathBuf)]) -> Result<BTreeMap<String, Artifact>> {
    files
        .iter()
        .map(|(name, p)| {
            let rel = p.strip_prefix(out).unwrap_or(p).to_string_lossy().into_owned();
            Ok((name.clone(), Artifact { path: rel, sha256: file_sha256(p)? }))
        })
        .collect()
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    /// Take the lock. A lock left behind by a process that no longer exists
    /// is reclaimed.
    pub fn acquire(out: &Path) -> Result<DirLock> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join(LOCK_FILE);
        let mut reclaimed = false;
        loop {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(DirLock { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if !reclaimed && holder_is_gone(&path) {
                        warn!("removing stale lock {}", path.display());
                        let _ = std::fs::remove_file(&path);
                        reclaimed = true;
                        continue;
                    }
                    return Err(Error::Dependency(format!(
                        "{} is locked by another pipeline process (remove {} if none is running)",
                        out.display(),
                        path.display()
                    )));
                }
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
    }
}

/// Only decidable where `/proc` exists; elsewhere a lock is never treated as
/// stale.
fn holder_is_gone(lock: &Path) -> bool {
    let Ok(text) = std::fs::read_to_string(lock) else {
        return false;
    };
    let Ok(pid) = text.trim().parse::<u32>() else {
        return false;
    };
    Path::new("/proc/self").exists() && pid != std::process::id() && !Path::new(&format!("/proc/{pid}")).exists()
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let a = DirLock::acquire(dir.path()).unwrap();
        assert!(matches!(DirLock::acquire(dir.path()), Err(Error::Dependency(_))));
        drop(a);
        DirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn lock_of_a_dead_process_is_reclaimed() {
        let dir = tempfile::tempdir().unwrap();
        let mut child = std::process::Command::new("true").spawn().unwrap();
        let pid = child.id();
        child.wait().unwrap();
        std::fs::write(dir.path().join(LOCK_FILE), format!("{pid}\n")).unwrap();
        let reclaimed = DirLock::acquire(dir.path());
        if Path::new("/proc/self").exists() {
            assert!(reclaimed.is_ok());
        }
    }

    #[test]
    fn current_requires_matching_key_and_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.bin");
        std::fs::write(&f, b"one").unwrap();
        let mut m = RunManifest::default();
        m.stages.insert(
            "s".into(),
            StageRecord {
                key: "k".into(),
                started: 0,
                finished: 0,
                artifacts: checksum_artifacts(dir.path(), &[("a".into(), f.clone())]).unwrap(),
            },
        );
        assert_eq!(m.stages["s"].artifacts["a"].path, "a.bin");
        assert!(m.is_current(dir.path(), "s", "k"));
        assert!(!m.is_current(dir.path(), "s", "other"));
        m.save(dir.path()).unwrap();
        assert_eq!(RunManifest::load_or_new(dir.path()).unwrap(), m);
        std::fs::write(&f, b"two").unwrap();
        assert!(!m.is_current(dir.path(), "s", "k"));
    }
}
