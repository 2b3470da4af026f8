use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One JSON object per line; metrics that do not apply are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLine {
    pub run_id: String,
    pub stage: String,
    pub epoch: usize,
    pub split: String,
    pub loss_p: Option<f64>,
    pub loss_a: Option<f64>,
    pub loss_t: Option<f64>,
    pub loss_total: Option<f64>,
    pub acc: Option<f64>,
    pub f1: Option<f64>,
    pub ccc: Option<f64>,
    pub seconds: f64,
}

pub trait MetricsSink {
    fn record(&mut self, line: &MetricsLine) -> Result<()>;
}

/// Discards everything.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _: &MetricsLine) -> Result<()> {
        Ok(())
    }
}

impl MetricsSink for Vec<MetricsLine> {
    fn record(&mut self, line: &MetricsLine) -> Result<()> {
        self.push(line.clone());
        Ok(())
    }
}

/// Append-only JSON-lines file, flushed after every record.
pub struct JsonlSink {
    path: PathBuf,
    file: File,
}

impl JsonlSink {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(JsonlSink {
            path: path.to_path_buf(),
            file,
        })
    }
}

impl MetricsSink for JsonlSink {
    fn record(&mut self, line: &MetricsLine) -> Result<()> {
        let mut text = serde_json::to_string(line)?;
        text.push('\n');
        self.file
            .write_all(text.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsLine>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| {
            let l = l.map_err(|e| Error::io(path, e))?;
            Ok(serde_json::from_str(&l)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appends_and_reads_back_with_nulls() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let line = MetricsLine {
            run_id: "r".into(),
            stage: "source".into(),
            epoch: 1,
            split: "dev".into(),
            loss_p: Some(0.5),
            loss_a: None,
            loss_t: None,
            loss_total: Some(0.5),
            acc: Some(0.75),
            f1: Some(0.7),
            ccc: None,
            seconds: 0.25,
        };
        JsonlSink::open(&path).unwrap().record(&line).unwrap();
        JsonlSink::open(&path).unwrap().record(&line).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().next().unwrap().contains("\"ccc\":null"));
        assert_eq!(read_metrics(&path).unwrap(), vec![line.clone(), line]);
    }
}
