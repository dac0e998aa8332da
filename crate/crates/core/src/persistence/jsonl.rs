use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::trainer::{EpochRecord, PhaseSummary, RunReport};

/// One line of a metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum MetricsRecord {
    Epoch(EpochRecord),
    Phase(PhaseSummary),
}

impl MetricsRecord {
    /// Epoch records followed by phase summaries.
    pub fn from_report(report: &RunReport) -> Vec<MetricsRecord> {
        report
            .epochs
            .iter()
            .cloned()
            .map(MetricsRecord::Epoch)
            .chain(report.phases.iter().cloned().map(MetricsRecord::Phase))
            .collect()
    }
}

/// Appends one JSON object per line to `path` (created if missing) and flushes.
pub fn append_jsonl<T: Serialize>(records: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Parse(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    w.get_ref().sync_data().map_err(|e| Error::io(path, e))
}

/// Replaces `path` with the given records, one per line.
pub fn write_jsonl<T: Serialize>(records: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    for r in records {
        serde_json::to_writer(&mut bytes, r).map_err(|e| Error::Parse(e.to_string()))?;
        bytes.push(b'\n');
    }
    super::checkpoint::write_atomic(path, &bytes)
}

/// Reads every non-blank line of `path` as a `T`.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn append_metrics(records: &[MetricsRecord], path: impl AsRef<Path>) -> Result<()> {
    append_jsonl(records, path)
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    read_jsonl(path)
}

/// Writes a corpus as `{prompt, completion, kind}` lines.
pub fn write_corpus(examples: &[Example], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(examples, path)
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    read_jsonl(path)
}
