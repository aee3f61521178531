//! Session store with per-session step exclusion and on-disk persistence.
//!
//! Each session directory holds `snapshot.json` (`{"applied": n, "state": ..}`)
//! and `log.jsonl`, one `{"seq": i, "record": ..}` line per committed step.
//! Loading applies logged records with `seq > applied` on top of the
//! snapshot. The snapshot is rewritten every [`COMPACT_EVERY`] records.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use personaflow::engine::{SessionState, StepRecord};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const COMPACT_EVERY: u64 = 16;

const SNAPSHOT: &str = "snapshot.json";
const LOG: &str = "log.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown session {0}")]
    NotFound(String),
    #[error("a step is already in flight for session {0}")]
    Busy(String),
    #[error("session {0} already exists")]
    Exists(String),
    #[error("persistence failed: {0}")]
    Io(String),
    #[error("corrupt session data in {path}: {message}")]
    Corrupt { path: String, message: String },
}

fn io(e: std::io::Error) -> StoreError {
    StoreError::Io(e.to_string())
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    applied: u64,
    state: SessionState,
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    seq: u64,
    record: StepRecord,
}

struct Slot {
    committed: RwLock<Arc<SessionState>>,
    busy: AtomicBool,
    applied: AtomicU64,
    log: Mutex<()>,
}

impl Slot {
    fn new(state: SessionState, applied: u64) -> Self {
        Slot {
            committed: RwLock::new(Arc::new(state)),
            busy: AtomicBool::new(false),
            applied: AtomicU64::new(applied),
            log: Mutex::new(()),
        }
    }

    fn current(&self) -> Arc<SessionState> {
        self.committed.read().expect("session lock poisoned").clone()
    }
}

#[derive(Default)]
pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
    dir: Option<PathBuf>,
}

/// Exclusive right to step one session; released on drop.
pub struct StepGuard<'a> {
    store: &'a SessionStore,
    id: String,
    slot: Arc<Slot>,
}

impl StepGuard<'_> {
    pub fn state(&self) -> Arc<SessionState> {
        self.slot.current()
    }

    /// Persists `record` and publishes `next` as the committed state.
    pub fn commit(&self, record: &StepRecord, next: SessionState) -> Result<(), StoreError> {
        let _log = self.slot.log.lock().expect("log lock poisoned");
        let seq = self.slot.applied.load(Ordering::SeqCst) + 1;
        if let Some(dir) = self.store.session_dir(&self.id) {
            append_line(&dir.join(LOG), &LogLine { seq, record: record.clone() })?;
            if seq % COMPACT_EVERY == 0 {
                write_snapshot(&dir, &Snapshot { applied: seq, state: next.clone() })?;
            }
        }
        self.slot.applied.store(seq, Ordering::SeqCst);
        *self.slot.committed.write().expect("session lock poisoned") = Arc::new(next);
        Ok(())
    }
}

impl Drop for StepGuard<'_> {
    fn drop(&mut self) {
        self.slot.busy.store(false, Ordering::SeqCst);
    }
}

fn append_line<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let mut line = serde_json::to_string(value).map_err(|e| StoreError::Io(e.to_string()))?;
    line.push('\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    f.write_all(line.as_bytes()).map_err(io)?;
    f.sync_data().map_err(io)
}

fn write_snapshot(dir: &Path, snapshot: &Snapshot) -> Result<(), StoreError> {
    let tmp = dir.join(format!("{SNAPSHOT}.tmp"));
    let bytes = serde_json::to_vec(snapshot).map_err(|e| StoreError::Io(e.to_string()))?;
    {
        let mut f = File::create(&tmp).map_err(io)?;
        f.write_all(&bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, dir.join(SNAPSHOT)).map_err(io)
}

fn load_session(dir: &Path) -> Result<(SessionState, u64), StoreError> {
    let corrupt = |path: &Path, message: String| StoreError::Corrupt {
        path: path.display().to_string(),
        message,
    };
    let snap_path = dir.join(SNAPSHOT);
    let snapshot: Snapshot = serde_json::from_slice(&fs::read(&snap_path).map_err(io)?)
        .map_err(|e| corrupt(&snap_path, e.to_string()))?;
    let mut state = snapshot.state;
    let mut applied = snapshot.applied;
    let log_path = dir.join(LOG);
    if log_path.exists() {
        let lines: Vec<String> = BufReader::new(File::open(&log_path).map_err(io)?)
            .lines()
            .collect::<Result<_, _>>()
            .map_err(io)?;
        let last = lines.len().saturating_sub(1);
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: LogLine = match serde_json::from_str(line) {
                Ok(e) => e,
                // a torn final line is a step that never committed
                Err(e) if i == last => {
                    tracing::warn!(path = %log_path.display(), "ignoring torn log tail: {e}");
                    break;
                }
                Err(e) => return Err(corrupt(&log_path, format!("line {}: {e}", i + 1))),
            };
            if entry.seq <= applied {
                continue;
            }
            if entry.seq != applied + 1 {
                return Err(corrupt(&log_path, format!("expected seq {}, found {}", applied + 1, entry.seq)));
            }
            state = state
                .apply(&entry.record)
                .map_err(|e| corrupt(&log_path, format!("line {}: {e}", i + 1)))?;
            applied = entry.seq;
        }
    }
    Ok((state, applied))
}

impl SessionStore {
    pub fn in_memory() -> Self {
        SessionStore::default()
    }

    /// Opens (creating if needed) a persistent store and replays every
    /// session found in `dir`.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io)?;
        let mut sessions = HashMap::new();
        for entry in fs::read_dir(&dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if !path.join(SNAPSHOT).exists() {
                continue;
            }
            let (state, applied) = load_session(&path)?;
            sessions.insert(state.session_id.clone(), Arc::new(Slot::new(state, applied)));
        }
        Ok(SessionStore {
            sessions: RwLock::new(sessions),
            dir: Some(dir),
        })
    }

    fn session_dir(&self, id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(id))
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("store lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, state: SessionState) -> Result<(), StoreError> {
        let id = state.session_id.clone();
        let mut sessions = self.sessions.write().expect("store lock poisoned");
        if sessions.contains_key(&id) {
            return Err(StoreError::Exists(id));
        }
        if let Some(dir) = self.session_dir(&id) {
            fs::create_dir_all(&dir).map_err(io)?;
            write_snapshot(&dir, &Snapshot { applied: 0, state: state.clone() })?;
        }
        sessions.insert(id, Arc::new(Slot::new(state, 0)));
        Ok(())
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, StoreError> {
        self.sessions
            .read()
            .expect("store lock poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(id.to_string()))
    }

    /// Last committed state; never waits for an in-flight step.
    pub fn get(&self, id: &str) -> Result<Arc<SessionState>, StoreError> {
        Ok(self.slot(id)?.current())
    }

    pub fn try_begin(&self, id: &str) -> Result<StepGuard<'_>, StoreError> {
        let slot = self.slot(id)?;
        if slot.busy.compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst).is_err() {
            return Err(StoreError::Busy(id.to_string()));
        }
        Ok(StepGuard {
            store: self,
            id: id.to_string(),
            slot,
        })
    }
}
