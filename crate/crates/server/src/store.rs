//! Append-only event log on disk plus an optional state snapshot.
//!
//! The log (`events.jsonl`) is the source of truth. `snapshot.json` holds
//! the engine state after the first `event_count` lines together with the
//! sha256 of those lines; it is used only when the hash still matches.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use adapt_core::events::{self, LogEvent};
use adapt_core::session::EngineState;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const LOG_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("snapshot: {0}")]
    Snapshot(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub event_count: u64,
    /// Lowercase hex sha256 of the log's first `event_count` lines.
    pub log_sha256: String,
    pub state: EngineState,
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    file: File,
    hasher: Sha256,
    event_count: u64,
    since_snapshot: u64,
}

/// What [`Store::open`] found on disk.
#[derive(Debug)]
pub struct Recovered {
    /// State and event count from a snapshot that matches the log.
    pub snapshot: Option<(EngineState, u64)>,
    /// Events not covered by the snapshot, oldest first.
    pub tail: Vec<LogEvent>,
}

fn hex(hasher: &Sha256) -> String {
    format!("{:x}", hasher.clone().finalize())
}

impl Store {
    pub fn open(dir: impl Into<PathBuf>) -> Result<(Store, Recovered), StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let log_path = dir.join(LOG_FILE);
        let mut bytes = match fs::read(&log_path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io_err(&log_path)(e)),
        };
        // A crash mid-append can leave an unterminated last line.
        if !bytes.is_empty() && bytes.last() != Some(&b'\n') {
            let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
            tracing::warn!(dropped = bytes.len() - keep, "discarding torn final log line");
            bytes.truncate(keep);
            let f = OpenOptions::new().write(true).open(&log_path).map_err(io_err(&log_path))?;
            f.set_len(keep as u64).map_err(io_err(&log_path))?;
            f.sync_all().map_err(io_err(&log_path))?;
        }

        let snapshot = Self::read_snapshot(&dir);
        let mut hasher = Sha256::new();
        let mut resume_at: Option<usize> = None;
        let mut lines = Vec::new();
        let mut count = 0u64;
        let matches = |hasher: &Sha256, count: u64| {
            snapshot
                .as_ref()
                .is_some_and(|s| s.event_count == count && s.log_sha256 == hex(hasher))
        };
        if matches(&hasher, 0) {
            resume_at = Some(0);
        }
        for line in bytes.split_inclusive(|b| *b == b'\n') {
            hasher.update(line);
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            lines.push(line);
            count += 1;
            if matches(&hasher, count) {
                resume_at = Some(lines.len());
            }
        }
        if snapshot.is_some() && resume_at.is_none() {
            tracing::warn!("snapshot does not match the log; replaying from the start");
        }
        let start = resume_at.unwrap_or(0);
        // Reported line numbers count events; blank lines are skipped.
        let mut tail = Vec::with_capacity(lines.len() - start);
        for (i, line) in lines.iter().enumerate().skip(start) {
            let text = std::str::from_utf8(line).map_err(|e| StoreError::Corrupt {
                path: log_path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            tail.push(serde_json::from_str(text).map_err(|e| StoreError::Corrupt {
                path: log_path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }

        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io_err(&log_path))?;
        let store = Store {
            dir,
            file,
            hasher,
            event_count: count,
            since_snapshot: (lines.len() - start) as u64,
        };
        let snapshot = match (snapshot, resume_at) {
            (Some(s), Some(_)) => Some((s.state, s.event_count)),
            _ => None,
        };
        Ok((store, Recovered { snapshot, tail }))
    }

    fn read_snapshot(dir: &Path) -> Option<Snapshot> {
        let path = dir.join(SNAPSHOT_FILE);
        let text = fs::read_to_string(&path).ok()?;
        match serde_json::from_str(&text) {
            Ok(s) => Some(s),
            Err(e) => {
                tracing::warn!(error = %e, "ignoring unreadable snapshot");
                None
            }
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join(LOG_FILE)
    }

    pub fn event_count(&self) -> u64 {
        self.event_count
    }

    /// Events appended since the last snapshot (or since opening).
    pub fn since_snapshot(&self) -> u64 {
        self.since_snapshot
    }

    /// Appends `events` with a single write and syncs the file.
    pub fn append(&mut self, events: &[LogEvent]) -> Result<(), StoreError> {
        if events.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for event in events {
            buf.extend_from_slice(events::to_json_line(event).as_bytes());
            buf.push(b'\n');
        }
        let path = self.log_path();
        self.file.write_all(&buf).map_err(io_err(&path))?;
        self.file.flush().map_err(io_err(&path))?;
        self.file.sync_data().map_err(io_err(&path))?;
        self.hasher.update(&buf);
        self.event_count += events.len() as u64;
        self.since_snapshot += events.len() as u64;
        Ok(())
    }

    /// Writes `state`, which must reflect every appended event, as the new
    /// snapshot. The file is replaced atomically.
    pub fn write_snapshot(&mut self, state: &EngineState) -> Result<(), StoreError> {
        let snapshot = Snapshot {
            event_count: self.event_count,
            log_sha256: hex(&self.hasher),
            state: state.clone(),
        };
        let path = self.dir.join(SNAPSHOT_FILE);
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        serde_json::to_writer(&mut f, &snapshot)?;
        f.sync_all().map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        self.since_snapshot = 0;
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn replace_handle(&mut self, file: File) {
        self.file = file;
    }
}
