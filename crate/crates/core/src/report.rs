//! Report files: curve CSV, run report JSON lines, sweep aggregate CSV.
//!
//! Floats are written in their shortest round-trip decimal form, so every
//! value reparses to the same bits. Files are written whole: content goes
//! to a temporary file in the target directory which is then renamed.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::harness::{EpochRecord, RunRecord};
use crate::schedule::CurveSample;

pub const CURVE_HEADER: &str = "t,lr";
pub const AGGREGATE_HEADER: &str = "schedule,k,median_err,min_err,max_err,n_diverged";

/// Writes `bytes` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn curve_csv(samples: &[CurveSample]) -> String {
    let mut out = String::with_capacity(32 * (samples.len() + 1));
    out.push_str(CURVE_HEADER);
    out.push('\n');
    for s in samples {
        writeln!(out, "{},{}", s.t, s.lr).unwrap();
    }
    out
}

pub fn parse_curve_csv(text: &str) -> Result<Vec<CurveSample>> {
    let bad = |line: usize, message: String| Error::Parse {
        path: "<curve>".into(),
        message: format!("line {line}: {message}"),
    };
    let mut lines = text.lines();
    if lines.next() != Some(CURVE_HEADER) {
        return Err(bad(1, format!("expected header {CURVE_HEADER:?}")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let (t, lr) = line
                .split_once(',')
                .ok_or_else(|| bad(i + 2, "expected two columns".into()))?;
            let num = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| bad(i + 2, format!("not a number: {v:?}")))
            };
            Ok(CurveSample {
                t: num(t)?,
                lr: num(lr)?,
            })
        })
        .collect()
}

/// Last line of a run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: String,
    pub final_test_error: f64,
    pub final_train_loss: Option<f64>,
    pub diverged: bool,
    pub steps: usize,
    /// `None` unless timing was requested; reports stay byte-reproducible.
    pub wall_time_s: Option<f64>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum ReportLine {
    Epoch(EpochRecord),
    Summary(Box<RunSummary>),
}

/// Per-epoch lines plus the summary, as read back from a report.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub epochs: Vec<EpochRecord>,
    pub summary: RunSummary,
}

impl RunReport {
    pub fn from_record(record: &RunRecord, echo: &RunConfig, with_timing: bool) -> Self {
        RunReport {
            epochs: record.epochs.clone(),
            summary: RunSummary {
                schema_version: SCHEMA_VERSION.to_string(),
                final_test_error: record.final_test_error,
                final_train_loss: record.final_train_loss(),
                diverged: record.diverged,
                steps: record.steps.len(),
                wall_time_s: with_timing.then_some(record.wall_time_s),
                config: echo.clone(),
            },
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("epoch line serializes"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&self.summary).expect("summary serializes"));
        out.push('\n');
        out
    }

    /// Parses a complete report; a missing summary line is an error, which
    /// is how a half-written or foreign file is recognised.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let bad = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            message,
        };
        let mut epochs = Vec::new();
        let mut summary = None;
        for (i, line) in text.lines().enumerate() {
            if summary.is_some() {
                return Err(bad(format!("line {}: content after summary", i + 1)));
            }
            match serde_json::from_str::<ReportLine>(line) {
                Ok(ReportLine::Epoch(e)) => epochs.push(e),
                Ok(ReportLine::Summary(s)) => summary = Some(*s),
                Err(e) => return Err(bad(format!("line {}: {e}", i + 1))),
            }
        }
        let summary = summary.ok_or_else(|| bad("missing summary line".into()))?;
        Ok(RunReport { epochs, summary })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

/// One row of the sweep aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub schedule: String,
    pub k: f64,
    /// Over non-diverged seeds; NaN when every seed diverged.
    pub median_err: f64,
    pub min_err: f64,
    pub max_err: f64,
    pub n_seeds: usize,
    pub n_diverged: usize,
}

pub fn aggregate_csv(rows: &[Aggregate]) -> String {
    let mut out = String::new();
    out.push_str(AGGREGATE_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.schedule, r.k, r.median_err, r.min_err, r.max_err, r.n_diverged
        )
        .unwrap();
    }
    out
}
