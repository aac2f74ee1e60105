use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::RunIoError;
use crate::training::MetricsRow;

/// Appends one JSON object per line, flushed after every row.
#[derive(Debug)]
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    /// Truncates `path` and writes `existing` rows first.
    pub fn create(path: &Path, existing: &[MetricsRow]) -> Result<Self, RunIoError> {
        let f = File::create(path).map_err(|e| RunIoError::io(path, e))?;
        let mut w = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        };
        for row in existing {
            w.push(row)?;
        }
        Ok(w)
    }

    pub fn push(&mut self, row: &MetricsRow) -> Result<(), RunIoError> {
        let line = serde_json::to_string(row).map_err(|e| RunIoError::Record(e.to_string()))?;
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| RunIoError::io(&self.path, e))
    }
}

pub fn parse_metrics_line(line: &str) -> Result<MetricsRow, RunIoError> {
    serde_json::from_str(line).map_err(|e| RunIoError::Record(e.to_string()))
}

pub fn read_metrics_jsonl(path: &Path) -> Result<Vec<MetricsRow>, RunIoError> {
    let f = File::open(path).map_err(|e| RunIoError::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| RunIoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_metrics_line(&line).map_err(|e| match e {
            RunIoError::Record(m) => RunIoError::Record(format!("line {}: {m}", i + 1)).in_file(path),
            e => e,
        })?;
        rows.push(row);
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Comma-separated table, one column per concept mean.
pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<(), RunIoError> {
    let k = rows.iter().map(|r| r.concept_p_mean.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| RunIoError::io(path, std::io::Error::other(e)))?;
    let mut header: Vec<String> = [
        "env_steps",
        "episodes",
        "mean_test_return",
        "loss",
        "epsilon",
        "concept_accuracy",
    ]
    .map(String::from)
    .to_vec();
    header.extend((0..k).map(|j| format!("p_mean_{j}")));
    let map = |e: csv::Error| RunIoError::io(path, std::io::Error::other(e));
    w.write_record(&header).map_err(&map)?;
    for r in rows {
        let mut rec = vec![
            r.env_steps.to_string(),
            r.episodes.to_string(),
            r.mean_test_return.to_string(),
            opt(r.loss),
            r.epsilon.to_string(),
            opt(r.concept_accuracy),
        ];
        rec.extend((0..k).map(|j| opt(r.concept_p_mean.get(j).copied())));
        w.write_record(&rec).map_err(&map)?;
    }
    w.flush().map_err(|e| RunIoError::io(path, e))
}
