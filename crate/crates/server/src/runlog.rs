//! Append-only run log and content-addressed artifact store.
//!
//! Each run appends a `running` line when it starts and a terminal line when it
//! ends; readers fold lines by `run_id`, keeping the latest state.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Build,
    Explain,
    Train,
    Predict,
    Eval,
    Assess,
    Compose,
    Serve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub kind: RunKind,
    pub config_digest: String,
    pub inputs_digest: String,
    /// Artifact paths written by the run.
    #[serde(default)]
    pub outputs: Vec<String>,
    /// Digest over the written artifacts, in order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs_digest: Option<String>,
    pub started_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    pub status: RunStatus,
    /// Set when a failed run left some outputs behind.
    #[serde(default)]
    pub partial: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunLogError {
    #[error("run log i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt run log line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("a train run is already in progress ({0})")]
    TrainInProgress(String),
}

pub struct RunLog {
    path: PathBuf,
    write: Mutex<()>,
}

impl RunLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into(), write: Mutex::new(()) }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn io(&self, source: std::io::Error) -> RunLogError {
        RunLogError::Io { path: self.path.clone(), source }
    }

    fn append(&self, record: &RunRecord) -> Result<(), RunLogError> {
        let mut line = serde_json::to_vec(record).expect("record serializes");
        line.push(b'\n');
        let _guard = self.write.lock().unwrap_or_else(|e| e.into_inner());
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path).map_err(|e| self.io(e))?;
        file.write_all(&line).map_err(|e| self.io(e))
    }

    pub fn start(&self, kind: RunKind, config_digest: &str, inputs_digest: &str) -> Result<RunRecord, RunLogError> {
        let record = RunRecord {
            run_id: uuid::Uuid::new_v4().to_string(),
            kind,
            config_digest: config_digest.into(),
            inputs_digest: inputs_digest.into(),
            outputs: Vec::new(),
            outputs_digest: None,
            started_at: Utc::now(),
            finished_at: None,
            status: RunStatus::Running,
            partial: false,
            error: None,
        };
        self.append(&record)?;
        Ok(record)
    }

    /// Appends the terminal state of `record`.
    pub fn finish(&self, mut record: RunRecord, outcome: Result<(), String>) -> Result<RunRecord, RunLogError> {
        record.finished_at = Some(Utc::now());
        record.outputs_digest = (!record.outputs.is_empty()).then(|| outputs_digest(&record.outputs));
        match outcome {
            Ok(()) => record.status = RunStatus::Succeeded,
            Err(e) => {
                record.status = RunStatus::Failed;
                record.partial = !record.outputs.is_empty();
                record.error = Some(e);
            }
        }
        self.append(&record)?;
        Ok(record)
    }

    /// Latest state of every run, in start order.
    pub fn records(&self) -> Result<Vec<RunRecord>, RunLogError> {
        let text = match std::fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(self.io(e)),
        };
        let mut order: Vec<String> = Vec::new();
        let mut latest: std::collections::HashMap<String, RunRecord> = std::collections::HashMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let record: RunRecord =
                serde_json::from_str(line).map_err(|e| RunLogError::Corrupt { line: i + 1, message: e.to_string() })?;
            if !latest.contains_key(&record.run_id) {
                order.push(record.run_id.clone());
            }
            latest.insert(record.run_id.clone(), record);
        }
        Ok(order.into_iter().filter_map(|id| latest.remove(&id)).collect())
    }

    fn lock_path(&self) -> PathBuf {
        let mut name = self.path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".train.lock");
        self.path.with_file_name(name)
    }

    /// Takes the exclusive train lock; released when the guard drops.
    pub fn lock_train(&self, run_id: &str) -> Result<TrainLock, RunLogError> {
        let path = self.lock_path();
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                f.write_all(run_id.as_bytes()).map_err(|e| self.io(e))?;
                Ok(TrainLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let holder = std::fs::read_to_string(&path).unwrap_or_default();
                Err(RunLogError::TrainInProgress(holder))
            }
            Err(e) => Err(self.io(e)),
        }
    }
}

#[derive(Debug)]
pub struct TrainLock {
    path: PathBuf,
}

impl Drop for TrainLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Digest over the contents of the listed files (missing files hash as empty).
pub fn outputs_digest(paths: &[String]) -> String {
    let contents: Vec<Vec<u8>> = paths.iter().map(|p| std::fs::read(p).unwrap_or_default()).collect();
    cream_core::digest::digest_parts(contents.iter().map(Vec::as_slice))
}

/// Write-once store keyed by content digest.
pub struct ArtifactStore {
    dir: PathBuf,
}

impl ArtifactStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn put(&self, bytes: &[u8], extension: &str) -> std::io::Result<PathBuf> {
        let digest = cream_core::digest::sha256_hex(bytes);
        let path = self.dir.join(&digest[..2]).join(format!("{digest}.{extension}"));
        if !path.exists() {
            std::fs::create_dir_all(path.parent().expect("has parent"))?;
            cream_core::jsonl::write_atomic(&path, bytes)?;
        }
        Ok(path)
    }
}
