//! Run logs and their CSV / JSONL encodings.
//!
//! CSV has a fixed header of all record fields, empty cells for absent
//! values and 17 significant digits per float. JSONL starts with one
//! metadata object, then one object per record; an aborted run ends with an
//! `{"abort": ...}` line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::metrics::{MetricRecord, FIELDS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub name: String,
    /// Hex SHA-256 of the canonical config document.
    pub config_digest: String,
    /// Producing crate and version, e.g. `optdiag/0.1.0`.
    pub version: String,
    pub dataset: String,
    pub param_count: usize,
    pub steps: u64,
    pub batches_per_epoch: u64,
    pub config: ExperimentConfig,
}

impl RunMeta {
    pub fn label(&self) -> String {
        format!(
            "{} ({:?}, lr={}, scaling={:?})",
            self.name, self.config.optimizer.kind, self.config.optimizer.learning_rate, self.config.optimizer.scaling
        )
        .to_lowercase()
    }
}

/// Why and where a run stopped early.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub step: u64,
    pub kind: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub meta: RunMeta,
    pub records: Vec<MetricRecord>,
    pub abort: Option<Abort>,
    /// Excluded from the exported files so they stay byte-reproducible.
    pub wall_clock_secs: f64,
}

impl RunLog {
    /// `Err(Diverged)` if the run stopped early.
    pub fn ensure_complete(&self) -> Result<()> {
        match &self.abort {
            None => Ok(()),
            Some(a) => Err(Error::Diverged {
                step: a.step,
                message: format!("{}: {}", a.kind, a.message),
            }),
        }
    }

    pub fn last(&self) -> Option<&MetricRecord> {
        self.records.last()
    }

    /// Values of `field` at every record where it is present, with steps.
    pub fn series(&self, field: &str) -> Result<Vec<(u64, f64)>> {
        let mut out = Vec::new();
        for r in &self.records {
            let v = r.get(field).ok_or_else(|| Error::UnknownField(field.to_string()))?;
            if let Some(v) = v {
                out.push((r.step, v));
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

#[derive(Serialize, Deserialize)]
struct AbortLine {
    abort: Abort,
}

/// Streams records to CSV and JSONL, flushing after every line so a crash
/// leaves valid partial files.
pub struct RecordWriter {
    csv: csv::Writer<File>,
    jsonl: BufWriter<File>,
}

impl RecordWriter {
    pub fn create(csv_path: &Path, jsonl_path: &Path, meta: &RunMeta) -> Result<Self> {
        let mut csv = csv::Writer::from_path(csv_path)?;
        csv.write_record(FIELDS)?;
        csv.flush()?;
        let mut jsonl = BufWriter::new(File::create(jsonl_path)?);
        serde_json::to_writer(&mut jsonl, meta)?;
        jsonl.write_all(b"\n")?;
        jsonl.flush()?;
        Ok(RecordWriter { csv, jsonl })
    }

    pub fn write(&mut self, record: &MetricRecord) -> Result<()> {
        self.csv.write_record(record.csv_cells())?;
        self.csv.flush()?;
        serde_json::to_writer(&mut self.jsonl, record)?;
        self.jsonl.write_all(b"\n")?;
        self.jsonl.flush()?;
        Ok(())
    }

    pub fn write_abort(&mut self, abort: &Abort) -> Result<()> {
        serde_json::to_writer(&mut self.jsonl, &AbortLine { abort: abort.clone() })?;
        self.jsonl.write_all(b"\n")?;
        self.jsonl.flush()?;
        Ok(())
    }
}

/// Writes a whole log in one format.
pub fn export_records(log: &RunLog, format: Format, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(file);
            w.write_record(FIELDS)?;
            for r in &log.records {
                w.write_record(r.csv_cells())?;
            }
            w.flush()?;
        }
        Format::Jsonl => {
            let mut w = BufWriter::new(file);
            serde_json::to_writer(&mut w, &log.meta)?;
            w.write_all(b"\n")?;
            for r in &log.records {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n")?;
            }
            if let Some(a) = &log.abort {
                serde_json::to_writer(&mut w, &AbortLine { abort: a.clone() })?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Reads records from a CSV export.
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != FIELDS {
        return Err(Error::Parse {
            line: 1,
            message: "unexpected CSV header".into(),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let cells: Vec<&str> = row.iter().collect();
        out.push(MetricRecord::from_csv_cells(&cells, i + 2)?);
    }
    Ok(out)
}

/// Reads a JSONL export back into a log (wall clock is not stored).
pub fn read_jsonl(path: impl AsRef<Path>) -> Result<RunLog> {
    let reader = BufReader::new(File::open(path)?);
    let mut meta = None;
    let mut records = Vec::new();
    let mut abort = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let perr = |e: serde_json::Error| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        };
        if i == 0 {
            meta = Some(serde_json::from_str::<RunMeta>(&line).map_err(perr)?);
        } else if abort.is_some() {
            return Err(Error::Parse {
                line: i + 1,
                message: "content after abort line".into(),
            });
        } else if line.starts_with("{\"abort\"") {
            abort = Some(serde_json::from_str::<AbortLine>(&line).map_err(perr)?.abort);
        } else {
            records.push(serde_json::from_str::<MetricRecord>(&line).map_err(perr)?);
        }
    }
    let meta = meta.ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing metadata line".into(),
    })?;
    Ok(RunLog {
        meta,
        records,
        abort,
        wall_clock_secs: 0.0,
    })
}
