//! Per-event directory of append-only JSON-lines logs.
//!
//! ```text
//! <data_dir>/events/<event_id>/
//!     event.json      registration record
//!     posts.jsonl     admitted posts with their filter scores
//!     claims.jsonl    scored claims
//!     truth.jsonl     emitted truth points
//!     rounds.jsonl    one summary per completed batch
//!     reviews.jsonl   review audit log
//! ```
//!
//! A batch appends posts, claims and truth points first and its rounds line
//! last, so the rounds log marks what was committed. Lines belonging to an
//! uncommitted round are cut from the tail on open.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use tracing::warn;

use crate::ServiceError;

const RECORD_FILE: &str = "event.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Log {
    Posts,
    Claims,
    Truth,
    Rounds,
    Reviews,
}

impl Log {
    fn file_name(self) -> &'static str {
        match self {
            Log::Posts => "posts.jsonl",
            Log::Claims => "claims.jsonl",
            Log::Truth => "truth.jsonl",
            Log::Rounds => "rounds.jsonl",
            Log::Reviews => "reviews.jsonl",
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> ServiceError {
    ServiceError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone)]
pub struct EventStore {
    dir: PathBuf,
}

impl EventStore {
    pub fn events_root(data_dir: &Path) -> PathBuf {
        data_dir.join("events")
    }

    /// Creates the directory and writes the registration record. Fails with
    /// a conflict when the event already has a directory.
    pub fn create<R: Serialize>(data_dir: &Path, event_id: &str, record: &R) -> Result<Self, ServiceError> {
        let root = Self::events_root(data_dir);
        fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
        let dir = root.join(event_id);
        match fs::create_dir(&dir) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(ServiceError::Conflict(format!("event {event_id} already exists")));
            }
            Err(e) => return Err(io_err(&dir, e)),
        }
        let path = dir.join(RECORD_FILE);
        let body = serde_json::to_vec_pretty(record).map_err(|e| ServiceError::Internal(e.to_string()))?;
        fs::write(&path, body).map_err(|e| io_err(&path, e))?;
        Ok(Self { dir })
    }

    pub fn open(dir: PathBuf) -> Self {
        Self { dir }
    }

    /// Event directories under `data_dir`, sorted by name.
    pub fn list(data_dir: &Path) -> Result<Vec<PathBuf>, ServiceError> {
        let root = Self::events_root(data_dir);
        if !root.exists() {
            return Ok(Vec::new());
        }
        let mut dirs: Vec<PathBuf> = fs::read_dir(&root)
            .map_err(|e| io_err(&root, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.join(RECORD_FILE).is_file())
            .collect();
        dirs.sort();
        Ok(dirs)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn record<R: DeserializeOwned>(&self) -> Result<R, ServiceError> {
        let path = self.dir.join(RECORD_FILE);
        let data = fs::read(&path).map_err(|e| io_err(&path, e))?;
        serde_json::from_slice(&data)
            .map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))
    }

    pub fn append<T: Serialize>(&self, log: Log, items: &[T]) -> Result<(), ServiceError> {
        if items.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for item in items {
            serde_json::to_writer(&mut buf, item).map_err(|e| ServiceError::Internal(e.to_string()))?;
            buf.push(b'\n');
        }
        let path = self.dir.join(log.file_name());
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        file.write_all(&buf).map_err(|e| io_err(&path, e))?;
        file.sync_data().map_err(|e| io_err(&path, e))
    }

    /// All complete lines of `log`. A trailing line without its newline is
    /// a torn write and is skipped.
    pub fn read<T: DeserializeOwned>(&self, log: Log) -> Result<Vec<T>, ServiceError> {
        Ok(self.read_with_offsets(log)?.into_iter().map(|(_, v)| v).collect())
    }

    fn read_with_offsets<T: DeserializeOwned>(&self, log: Log) -> Result<Vec<(u64, T)>, ServiceError> {
        let path = self.dir.join(log.file_name());
        let data = match fs::read_to_string(&path) {
            Ok(d) => d,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path, e)),
        };
        let mut out = Vec::new();
        let mut offset = 0u64;
        for chunk in data.split_inclusive('\n') {
            let start = offset;
            offset += chunk.len() as u64;
            if !chunk.ends_with('\n') {
                warn!(path = %path.display(), "skipping torn trailing line");
                break;
            }
            let line = chunk.trim_end();
            if line.is_empty() {
                continue;
            }
            let value = serde_json::from_str(line)
                .map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))?;
            out.push((start, value));
        }
        Ok(out)
    }

    /// Cuts `log` at the first line for which `keep` is false. Used to drop
    /// the tail of a batch that never committed.
    pub fn truncate_after<T, F>(&self, log: Log, keep: F) -> Result<usize, ServiceError>
    where
        T: DeserializeOwned,
        F: Fn(&T) -> bool,
    {
        let path = self.dir.join(log.file_name());
        if !path.exists() {
            return Ok(0);
        }
        let lines = self.read_with_offsets::<T>(log)?;
        let cut = lines.iter().position(|(_, v)| !keep(v));
        let len = fs::metadata(&path).map_err(|e| io_err(&path, e))?.len();
        let end = match cut {
            Some(i) => lines[i].0,
            None => {
                // Drop a torn trailing line, if any.
                let data = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
                data.rfind('\n').map_or(0, |i| i as u64 + 1)
            }
        };
        if end == len {
            return Ok(0);
        }
        let dropped = cut.map_or(0, |i| lines.len() - i);
        warn!(path = %path.display(), dropped, "truncating uncommitted log tail");
        let file = File::options().write(true).open(&path).map_err(|e| io_err(&path, e))?;
        file.set_len(end).map_err(|e| io_err(&path, e))?;
        file.sync_data().map_err(|e| io_err(&path, e))?;
        Ok(dropped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Line {
        round: u32,
    }

    #[test]
    fn duplicate_directory_conflicts() {
        let tmp = tempfile::tempdir().unwrap();
        EventStore::create(tmp.path(), "e1", &Line { round: 0 }).unwrap();
        assert!(matches!(
            EventStore::create(tmp.path(), "e1", &Line { round: 0 }),
            Err(ServiceError::Conflict(_))
        ));
    }

    #[test]
    fn append_and_read_back() {
        let tmp = tempfile::tempdir().unwrap();
        let store = EventStore::create(tmp.path(), "e1", &Line { round: 0 }).unwrap();
        store.append(Log::Claims, &[Line { round: 1 }, Line { round: 2 }]).unwrap();
        store.append(Log::Claims, &[Line { round: 3 }]).unwrap();
        let lines: Vec<Line> = store.read(Log::Claims).unwrap();
        assert_eq!(lines.len(), 3);
        assert_eq!(store.record::<Line>().unwrap(), Line { round: 0 });
        assert_eq!(EventStore::list(tmp.path()).unwrap(), vec![store.dir().to_path_buf()]);
    }

    #[test]
    fn torn_tail_is_skipped_and_truncated() {
        let tmp = tempfile::tempdir().unwrap();
        let store = EventStore::create(tmp.path(), "e1", &Line { round: 0 }).unwrap();
        store.append(Log::Posts, &[Line { round: 1 }]).unwrap();
        let path = store.dir().join("posts.jsonl");
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"round\":").unwrap();
        assert_eq!(store.read::<Line>(Log::Posts).unwrap(), vec![Line { round: 1 }]);
        store.truncate_after::<Line, _>(Log::Posts, |_| true).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "{\"round\":1}\n");
    }

    #[test]
    fn uncommitted_rounds_are_cut() {
        let tmp = tempfile::tempdir().unwrap();
        let store = EventStore::create(tmp.path(), "e1", &Line { round: 0 }).unwrap();
        store
            .append(Log::Claims, &[Line { round: 1 }, Line { round: 2 }, Line { round: 2 }])
            .unwrap();
        assert_eq!(store.truncate_after::<Line, _>(Log::Claims, |l| l.round <= 1).unwrap(), 2);
        assert_eq!(store.read::<Line>(Log::Claims).unwrap(), vec![Line { round: 1 }]);
    }
}
