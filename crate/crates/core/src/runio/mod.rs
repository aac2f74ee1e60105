//! Run configuration, checkpoints, metrics tables, episode traces, concept
//! count sweeps and run-directory management.

mod checkpoint;
mod config;
mod lock;
mod metrics;
mod run;
mod sweep;
mod trace;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{config_to_toml, load_config, parse_config, RunConfig};
pub use lock::RunLock;
pub use metrics::{parse_metrics_line, read_metrics_jsonl, write_metrics_csv, MetricsWriter};
pub use run::{resume_training, run_training, RunOutcome, CHECKPOINT_FILE, METRICS_CSV, METRICS_JSONL};
pub use sweep::{band, run_sweep, write_sweep_csv, BandPoint, SweepCurve};
pub use trace::{
    export_trace, parse_trace_line, trace_episode, TraceHeader, TraceLine, TraceRecord,
    TRACE_SCHEMA,
};

use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum RunIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("{key}: {message}")]
    Range { key: String, message: String },
    #[error("{path}: {inner}")]
    InFile { path: PathBuf, inner: Box<RunIoError> },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("run directory {0} is locked by another process")]
    Locked(PathBuf),
    #[error("malformed record: {0}")]
    Record(String),
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl RunIoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        RunIoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn in_file(self, path: &Path) -> Self {
        RunIoError::InFile {
            path: path.to_path_buf(),
            inner: Box::new(self),
        }
    }

    /// The innermost error, skipping file context.
    pub fn root(&self) -> &RunIoError {
        match self {
            RunIoError::InFile { inner, .. } => inner.root(),
            e => e,
        }
    }
}

pub(crate) fn io_at(path: &Path) -> impl Fn(std::io::Error) -> RunIoError + '_ {
    move |e| RunIoError::io(path, e)
}

pub(crate) fn csv_at(path: &Path) -> impl Fn(csv::Error) -> RunIoError + '_ {
    move |e| RunIoError::io(path, std::io::Error::other(e))
}
