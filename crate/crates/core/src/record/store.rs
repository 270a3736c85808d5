//! Append-only JSON-lines store.
//!
//! Each line is `{"id":N,"crc32":C,"record":{...}}` where `C` is the CRC-32
//! of the exact `record` bytes. A line without its terminating newline is an
//! interrupted append: readers skip it and the next writer truncates it.

use std::fs::{File, OpenOptions, TryLockError};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::value::RawValue;

use super::{ConservationError, MeasurementRecord, RecordFilter};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}: another writer holds the store")]
    Locked(String),
    #[error("{path}:{line}: store corrupt: {reason}")]
    Corrupt {
        path: String,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    InvalidRecord(#[from] ConservationError),
    #[error("encoding record: {0}")]
    Encode(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredRecord {
    pub id: u64,
    pub record: MeasurementRecord,
}

#[derive(Deserialize)]
struct Line<'a> {
    id: u64,
    crc32: u32,
    #[serde(borrow)]
    record: &'a RawValue,
}

/// Exclusive writer handle. Readers use [`RecordStore::read_all`] and
/// [`RecordStore::query`] on the path and never take the lock.
#[derive(Debug)]
pub struct RecordStore {
    path: PathBuf,
    file: File,
    next_id: u64,
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Complete lines of `bytes` and the length of the prefix they cover.
fn complete_lines(bytes: &[u8]) -> (Vec<&[u8]>, usize) {
    let covered = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let mut lines: Vec<&[u8]> = bytes[..covered].split(|&b| b == b'\n').collect();
    lines.pop();
    (lines, covered)
}

fn decode(path: &Path, number: usize, raw: &[u8]) -> Result<StoredRecord, StoreError> {
    let corrupt = |reason: String| StoreError::Corrupt {
        path: path.display().to_string(),
        line: number,
        reason,
    };
    let line: Line = serde_json::from_slice(raw).map_err(|e| corrupt(e.to_string()))?;
    let actual = crc32fast::hash(line.record.get().as_bytes());
    if actual != line.crc32 {
        return Err(corrupt(format!(
            "checksum mismatch (stored {:08x}, computed {actual:08x})",
            line.crc32
        )));
    }
    let record: MeasurementRecord =
        serde_json::from_str(line.record.get()).map_err(|e| corrupt(e.to_string()))?;
    record.validate().map_err(|e| corrupt(e.to_string()))?;
    Ok(StoredRecord { id: line.id, record })
}

fn scan(path: &Path, bytes: &[u8]) -> Result<Vec<StoredRecord>, StoreError> {
    let (lines, _) = complete_lines(bytes);
    lines
        .into_iter()
        .enumerate()
        .map(|(i, raw)| decode(path, i + 1, raw))
        .collect()
}

impl RecordStore {
    /// Open or create the store for appending. Fails with
    /// [`StoreError::Locked`] while another writer holds it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io_error(&path))?;
        match file.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => return Err(StoreError::Locked(path.display().to_string())),
            Err(TryLockError::Error(e)) => return Err(io_error(&path)(e)),
        }

        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io_error(&path))?;
        let records = scan(&path, &bytes)?;
        let (_, covered) = complete_lines(&bytes);
        if covered < bytes.len() {
            tracing::warn!(
                path = %path.display(),
                bytes = bytes.len() - covered,
                "dropping interrupted trailing append"
            );
            file.set_len(covered as u64).map_err(io_error(&path))?;
            file.sync_data().map_err(io_error(&path))?;
        }
        let next_id = records.iter().map(|r| r.id + 1).max().unwrap_or(1);
        Ok(Self { path, file, next_id })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Append one record; the line is on disk when this returns.
    pub fn append(&mut self, record: &MeasurementRecord) -> Result<u64, StoreError> {
        record.validate()?;
        let body = serde_json::to_string(record)?;
        let id = self.next_id;
        let line = format!(
            "{{\"id\":{id},\"crc32\":{},\"record\":{body}}}\n",
            crc32fast::hash(body.as_bytes())
        );
        self.file
            .write_all(line.as_bytes())
            .and_then(|()| self.file.sync_data())
            .map_err(io_error(&self.path))?;
        self.next_id += 1;
        Ok(id)
    }

    /// Every complete record in file order.
    pub fn read_all(path: impl AsRef<Path>) -> Result<Vec<StoredRecord>, StoreError> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io_error(path))?;
        scan(path, &bytes)
    }

    /// Records matching every set filter, ordered by timestamp then id.
    pub fn query(
        path: impl AsRef<Path>,
        filter: &RecordFilter,
    ) -> Result<Vec<MeasurementRecord>, StoreError> {
        let mut hits: Vec<StoredRecord> = Self::read_all(path)?
            .into_iter()
            .filter(|s| filter.matches(&s.record))
            .collect();
        hits.sort_by(|a, b| a.record.timestamp.cmp(&b.record.timestamp).then(a.id.cmp(&b.id)));
        Ok(hits.into_iter().map(|s| s.record).collect())
    }

    /// Read through the writer's own path.
    pub fn records(&self) -> Result<Vec<StoredRecord>, StoreError> {
        Self::read_all(&self.path)
    }
}
