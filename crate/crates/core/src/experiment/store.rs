use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::evalkit::EvalReport;

const LOG_FILE: &str = "runs.jsonl";
const RUNS_DIR: &str = "runs";
/// Marker left in a run directory whose artifacts are partial.
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("run store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("run store {path}:{line}: {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("run id `{0}` is already in the store")]
    DuplicateRunId(String),
    #[error("pinned run `{0}` is not an evaluation record in the store")]
    UnknownPin(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Pretrain,
    Finetune,
    Evaluate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    Data,
    Training,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFailure {
    pub stage: String,
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunMetrics {
    Eval {
        report: EvalReport,
    },
    Trajectory {
        path: PathBuf,
        steps: usize,
        final_mlm_loss: Option<f64>,
    },
    None,
}

/// One line of the store log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub command: CommandKind,
    pub status: RunStatus,
    pub config_hash: String,
    pub seed: u64,
    pub started: DateTime<Utc>,
    pub ended: DateTime<Utc>,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_id: Option<String>,
    /// Paths relative to the store root.
    pub artifacts: Vec<PathBuf>,
    pub metrics: RunMetrics,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<RunFailure>,
}

impl RunRecord {
    pub fn report(&self) -> Option<&EvalReport> {
        match (&self.metrics, self.status) {
            (RunMetrics::Eval { report }, RunStatus::Completed) => Some(report),
            _ => None,
        }
    }
}

/// Append-only run log plus one artifact directory per run.
///
/// Appends go through a single lock, so worker threads can share a store.
#[derive(Debug)]
pub struct RunStore {
    root: PathBuf,
    writer: Mutex<()>,
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<RunStore, StoreError> {
        let root = root.into();
        let runs = root.join(RUNS_DIR);
        fs::create_dir_all(&runs).map_err(|source| StoreError::Io { path: runs, source })?;
        Ok(RunStore {
            root,
            writer: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join(LOG_FILE)
    }

    pub fn new_run_id() -> String {
        uuid::Uuid::new_v4().simple().to_string()
    }

    /// Creates `runs/<run_id>/` and returns its path.
    pub fn create_run_dir(&self, run_id: &str) -> Result<PathBuf, StoreError> {
        let dir = self.root.join(RUNS_DIR).join(run_id);
        fs::create_dir_all(&dir).map_err(|source| StoreError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(dir)
    }

    /// Store-relative form of a path inside the store.
    pub fn relative(&self, path: &Path) -> PathBuf {
        path.strip_prefix(&self.root)
            .map(Path::to_path_buf)
            .unwrap_or_else(|_| path.to_path_buf())
    }

    pub fn mark_incomplete(&self, run_dir: &Path, reason: &str) {
        if let Err(e) = fs::write(run_dir.join(INCOMPLETE_MARKER), format!("{reason}\n")) {
            log::warn!("cannot mark {} incomplete: {e}", run_dir.display());
        }
    }

    pub fn append(&self, record: &RunRecord) -> Result<(), StoreError> {
        let _guard = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        if self.records()?.iter().any(|r| r.run_id == record.run_id) {
            return Err(StoreError::DuplicateRunId(record.run_id.clone()));
        }
        let path = self.log_path();
        let io = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io)?;
        f.write_all(line.as_bytes()).map_err(io)?;
        f.flush().map_err(io)
    }

    /// All records in append order.
    pub fn records(&self) -> Result<Vec<RunRecord>, StoreError> {
        let path = self.log_path();
        let file = match fs::File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => return Err(StoreError::Io { path, source }),
        };
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| StoreError::Io {
                path: path.clone(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(
                serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                    path: path.clone(),
                    line: i + 1,
                    reason: e.to_string(),
                })?,
            );
        }
        Ok(out)
    }

    /// The latest completed report per (dataset, model), except where a
    /// pinned run supplies that cell.
    pub fn latest_reports(&self, pins: &[String]) -> Result<Vec<EvalReport>, StoreError> {
        let records = self.records()?;
        let mut cells: BTreeMap<(String, String), EvalReport> = BTreeMap::new();
        for report in records.iter().filter_map(RunRecord::report) {
            cells.insert(
                (report.dataset_id.clone(), report.model_id.clone()),
                report.clone(),
            );
        }
        let mut pinned = HashSet::new();
        for pin in pins {
            let report = records
                .iter()
                .find(|r| &r.run_id == pin)
                .and_then(RunRecord::report)
                .ok_or_else(|| StoreError::UnknownPin(pin.clone()))?;
            let key = (report.dataset_id.clone(), report.model_id.clone());
            if !pinned.insert(key.clone()) {
                log::warn!("several pins for {key:?}; the last one wins");
            }
            cells.insert(key, report.clone());
        }
        Ok(cells.into_values().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, dataset: &str, f1: f64) -> RunRecord {
        let now = Utc::now();
        RunRecord {
            run_id: id.into(),
            command: CommandKind::Evaluate,
            status: RunStatus::Completed,
            config_hash: "h".into(),
            seed: 0,
            started: now,
            ended: now,
            model_id: "M".into(),
            dataset_id: Some(dataset.into()),
            artifacts: vec![],
            metrics: RunMetrics::Eval {
                report: EvalReport {
                    dataset_id: dataset.into(),
                    model_id: "M".into(),
                    mean_f1: f1,
                    std_f1: 0.0,
                    fold_count: 1,
                    fold_f1: vec![f1],
                    mean_micro_f1: None,
                    delta_mp: Default::default(),
                },
            },
            warnings: vec![],
            failure: None,
        }
    }

    #[test]
    fn latest_wins_and_pins_override() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        store.append(&record("a", "d", 50.0)).unwrap();
        store.append(&record("b", "d", 60.0)).unwrap();
        store.append(&record("c", "e", 70.0)).unwrap();
        let latest = store.latest_reports(&[]).unwrap();
        assert_eq!(latest.len(), 2);
        assert_eq!(latest[0].mean_f1, 60.0);
        let pinned = store.latest_reports(&["a".into()]).unwrap();
        assert_eq!(pinned[0].mean_f1, 50.0);
        assert!(matches!(
            store.latest_reports(&["zz".into()]),
            Err(StoreError::UnknownPin(_))
        ));
        assert!(matches!(
            store.append(&record("a", "d", 1.0)),
            Err(StoreError::DuplicateRunId(_))
        ));
        assert_eq!(store.records().unwrap().len(), 3);
    }

    #[test]
    fn failed_records_are_not_reports() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        let mut r = record("a", "d", 50.0);
        r.status = RunStatus::Failed;
        store.append(&r).unwrap();
        assert!(store.latest_reports(&[]).unwrap().is_empty());
    }
}
