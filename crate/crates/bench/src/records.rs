//! Append-only JSON-lines store of finished and failed cells.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use ftlab_core::train::TrialResult;

use crate::matrix::CellKey;
use crate::BenchError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    #[serde(flatten)]
    pub key: CellKey,
    pub primary_metric: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<TrialResult>,
}

impl RunRecord {
    pub fn completed(key: CellKey, primary_metric: &str, result: TrialResult) -> Self {
        RunRecord {
            key,
            primary_metric: primary_metric.to_string(),
            status: Status::Completed,
            error: None,
            result: Some(result),
        }
    }

    pub fn failed(key: CellKey, primary_metric: &str, error: String) -> Self {
        RunRecord {
            key,
            primary_metric: primary_metric.to_string(),
            status: Status::Failed,
            error: Some(error),
            result: None,
        }
    }

    pub fn is_completed(&self) -> bool {
        self.status == Status::Completed && self.result.is_some()
    }
}

/// Reads every record. A final line without its newline is a write torn by
/// a crash and is dropped; any other malformed line is an error.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, BenchError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(BenchError::io(path, e)),
    };
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() && !complete => {
                log::warn!("{}: dropping torn final record", path.display());
            }
            Err(e) => {
                return Err(BenchError::Record(format!(
                    "{} line {}: {e}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

/// Latest record per cell, in key order.
pub fn latest(records: &[RunRecord]) -> BTreeMap<(String, String, String, u64, u64), RunRecord> {
    let mut map = BTreeMap::new();
    for r in records {
        map.insert(r.key.ordinal(), r.clone());
    }
    map
}

/// Serializes appends from many workers into one file; each record is
/// flushed as soon as it is written.
pub struct RecordAppender {
    path: PathBuf,
    file: Mutex<File>,
}

impl RecordAppender {
    /// Opens `path` for appending, first cutting off a torn final line.
    pub fn open(path: &Path) -> Result<Self, BenchError> {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(path)
            .map_err(|e| BenchError::io(path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)
            .map_err(|e| BenchError::io(path, e))?;
        if bytes.last().is_some_and(|&b| b != b'\n') {
            let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            log::warn!("{}: truncating torn final record", path.display());
            file.set_len(keep as u64).map_err(|e| BenchError::io(path, e))?;
        }
        Ok(RecordAppender {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn append(&self, record: &RunRecord) -> Result<(), BenchError> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| BenchError::io(&self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(seed: u64) -> CellKey {
        CellKey {
            dataset: "d".into(),
            arch: "MiniVGG".into(),
            strategy: "FT".into(),
            base_lr: 1e-3,
            seed,
        }
    }

    #[test]
    fn append_read_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        assert!(read_records(&path).unwrap().is_empty());
        {
            let app = RecordAppender::open(&path).unwrap();
            app.append(&RunRecord::failed(key(0), "accuracy", "boom".into())).unwrap();
            app.append(&RunRecord::failed(key(1), "accuracy", "boom".into())).unwrap();
        }
        std::fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .unwrap()
            .write_all(b"{\"dataset\":\"d\",\"ar")
            .unwrap();
        assert_eq!(read_records(&path).unwrap().len(), 2);
        let app = RecordAppender::open(&path).unwrap();
        app.append(&RunRecord::failed(key(0), "accuracy", "again".into())).unwrap();
        drop(app);
        let records = read_records(&path).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[2].error.as_deref(), Some("again"));
    }

    #[test]
    fn latest_record_wins() {
        let a = RunRecord::failed(key(0), "accuracy", "x".into());
        let mut b = a.clone();
        b.error = Some("y".into());
        let map = latest(&[a, b.clone()]);
        assert_eq!(map.len(), 1);
        assert_eq!(map.values().next(), Some(&b));
    }
}
