//! Single-file snapshot persistence for sessions.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::SessionState;
use crate::emit::UniqueIdAllocator;

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("snapshot store is corrupt: {0}")]
    CorruptStore(String),
    #[error("snapshot {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Puts snapshot bytes on disk.
pub trait SnapshotWriter: Send + Sync {
    fn write_snapshot(&self, path: &Path, bytes: &[u8]) -> io::Result<()>;
}

/// Writes a sibling temporary file, syncs it, renames it over the target
/// and syncs the directory.
#[derive(Debug, Clone, Copy, Default)]
pub struct AtomicFileWriter {
    interrupt_after: Option<usize>,
}

impl AtomicFileWriter {
    /// A writer that stops after `n` bytes and fails, leaving the partial
    /// temporary file behind as a killed process would.
    pub fn interrupted_after(n: usize) -> Self {
        Self {
            interrupt_after: Some(n),
        }
    }

    fn temp_path(path: &Path) -> PathBuf {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "snapshot".into());
        path.with_file_name(format!(".{name}.tmp"))
    }
}

impl SnapshotWriter for AtomicFileWriter {
    fn write_snapshot(&self, path: &Path, bytes: &[u8]) -> io::Result<()> {
        let tmp = Self::temp_path(path);
        let mut file = fs::File::create(&tmp)?;
        if let Some(n) = self.interrupt_after {
            file.write_all(&bytes[..n.min(bytes.len())])?;
            file.sync_all()?;
            return Err(io::Error::new(io::ErrorKind::Interrupted, "write interrupted"));
        }
        file.write_all(bytes)?;
        file.sync_all()?;
        drop(file);
        fs::rename(&tmp, path)?;
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            if let Ok(d) = fs::File::open(dir) {
                let _ = d.sync_all();
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SnapshotFile {
    version: u32,
    sessions: Vec<SessionState>,
    #[serde(default)]
    unique_ids: UniqueIdAllocator,
}

/// What a snapshot holds.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    pub sessions: Vec<SessionState>,
    pub unique_ids: UniqueIdAllocator,
}

#[derive(Clone)]
pub struct SnapshotStore {
    path: PathBuf,
    writer: Arc<dyn SnapshotWriter>,
}

impl std::fmt::Debug for SnapshotStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SnapshotStore").field("path", &self.path).finish()
    }
}

impl SnapshotStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            writer: Arc::new(AtomicFileWriter::default()),
        }
    }

    pub fn with_writer(mut self, writer: Arc<dyn SnapshotWriter>) -> Self {
        self.writer = writer;
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn save(&self, snapshot: &Snapshot) -> Result<(), StoreError> {
        let file = SnapshotFile {
            version: SNAPSHOT_VERSION,
            sessions: snapshot.sessions.clone(),
            unique_ids: snapshot.unique_ids.clone(),
        };
        let bytes = serde_json::to_vec(&file).expect("sessions serialize");
        self.writer
            .write_snapshot(&self.path, &bytes)
            .map_err(|source| StoreError::Io {
                path: self.path.clone(),
                source,
            })
    }

    /// Reads the snapshot. A missing file is an empty store.
    pub fn load(&self) -> Result<Snapshot, StoreError> {
        let bytes = match fs::read(&self.path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Snapshot::default()),
            Err(source) => {
                return Err(StoreError::Io {
                    path: self.path.clone(),
                    source,
                })
            }
        };
        let probe: serde_json::Value =
            serde_json::from_slice(&bytes).map_err(|e| StoreError::CorruptStore(e.to_string()))?;
        match probe.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(SNAPSHOT_VERSION) => {}
            other => {
                return Err(StoreError::CorruptStore(format!(
                    "unsupported snapshot version {other:?}"
                )))
            }
        }
        let file: SnapshotFile =
            serde_json::from_value(probe).map_err(|e| StoreError::CorruptStore(e.to_string()))?;
        for s in &file.sessions {
            s.check_invariants()
                .map_err(|e| StoreError::CorruptStore(format!("session {}: {e}", s.id)))?;
        }
        Ok(Snapshot {
            sessions: file.sessions,
            unique_ids: file.unique_ids,
        })
    }
}
