//! CSV rows for trials, confidence reports and experiment-2 snapshots.
//!
//! Column sets are fixed; every file starts with a header row even when it
//! has no data.

use std::fs::{self, File};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{ConfidenceTrace, SnapshotSlot, Trial};
use crate::assessment::ConfidenceReport;
use crate::error::{Error, Result};

pub const TRIAL_HEADER: &[&str] = &[
    "episode", "condition", "env", "delivered", "craters_hit", "steps", "n_triggers", "seed", "world_hash",
];
pub const REPORT_HEADER: &[&str] = &["episode", "t", "trigger", "si_min", "goa_g0", "goa_g1", "goa_g2"];
pub const TRACE_HEADER: &[&str] = &["episode", "schedule", "snapshot", "t", "confidence", "triggered"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub episode: u64,
    pub condition: String,
    pub env: String,
    pub delivered: bool,
    pub craters_hit: u32,
    pub steps: u32,
    pub n_triggers: u32,
    pub seed: u64,
    /// 16 hex digits.
    pub world_hash: String,
}

impl From<&Trial> for TrialRow {
    fn from(trial: &Trial) -> Self {
        let r = &trial.result;
        TrialRow {
            episode: r.episode,
            condition: r.condition.kind.to_string(),
            env: r.condition.environment.to_string(),
            delivered: r.delivered,
            craters_hit: r.craters_hit,
            steps: r.steps,
            n_triggers: r.n_triggers,
            seed: r.seed,
            world_hash: format!("{:016x}", r.world_hash),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub episode: u64,
    pub t: u32,
    pub trigger: String,
    pub si_min: Option<f64>,
    pub goa_g0: Option<f64>,
    pub goa_g1: Option<f64>,
    pub goa_g2: Option<f64>,
}

impl ReportRow {
    pub fn new(episode: u64, r: &ConfidenceReport) -> Result<ReportRow> {
        if r.per_goal.len() > 3 {
            return Err(Error::Config(format!(
                "reports.csv holds at most 3 goals, report has {}",
                r.per_goal.len()
            )));
        }
        let g = |i: usize| r.per_goal.get(i).copied();
        Ok(ReportRow {
            episode,
            t: r.t,
            trigger: r.trigger.to_string(),
            si_min: r.si_min,
            goa_g0: g(0),
            goa_g1: g(1),
            goa_g2: g(2),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub episode: u64,
    pub schedule: String,
    pub snapshot: String,
    pub t: u32,
    pub confidence: f64,
    pub triggered: bool,
}

pub fn trace_rows(trace: &ConfidenceTrace) -> impl Iterator<Item = TraceRow> + '_ {
    SnapshotSlot::ALL.into_iter().map(move |slot| {
        let s = trace.snapshot(slot);
        TraceRow {
            episode: trace.episode,
            schedule: trace.schedule.to_string(),
            snapshot: slot.as_str().to_string(),
            t: s.t,
            confidence: s.confidence,
            triggered: s.triggered,
        }
    })
}

/// Writes `rows` under `header`. The header is written explicitly so that an
/// empty row set still produces it.
pub fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows<T: DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let found = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    if !found.iter().eq(header.iter().copied()) {
        return Err(Error::Config(format!(
            "{}: header {:?} does not match expected {:?}",
            path.display(),
            found.iter().collect::<Vec<_>>(),
            header
        )));
    }
    r.deserialize().map(|row| row.map_err(|e| Error::csv(path, e))).collect()
}

pub fn write_trials(path: &Path, trials: &[Trial]) -> Result<()> {
    write_rows(path, TRIAL_HEADER, trials.iter().map(TrialRow::from))
}

pub fn read_trials(path: &Path) -> Result<Vec<TrialRow>> {
    read_rows(path, TRIAL_HEADER)
}

pub fn write_reports(path: &Path, trials: &[Trial]) -> Result<()> {
    let rows = trials
        .iter()
        .flat_map(|t| t.record.reports.iter().map(move |r| ReportRow::new(t.result.episode, r)))
        .collect::<Result<Vec<_>>>()?;
    write_rows(path, REPORT_HEADER, rows)
}

pub fn write_trace_reports(path: &Path, traces: &[ConfidenceTrace]) -> Result<()> {
    let rows = traces
        .iter()
        .flat_map(|t| t.reports.iter().map(move |r| ReportRow::new(t.episode, r)))
        .collect::<Result<Vec<_>>>()?;
    write_rows(path, REPORT_HEADER, rows)
}

pub fn read_reports(path: &Path) -> Result<Vec<ReportRow>> {
    read_rows(path, REPORT_HEADER)
}

pub fn write_traces(path: &Path, traces: &[ConfidenceTrace]) -> Result<()> {
    write_rows(path, TRACE_HEADER, traces.iter().flat_map(trace_rows))
}

pub fn read_traces(path: &Path) -> Result<Vec<TraceRow>> {
    read_rows(path, TRACE_HEADER)
}
