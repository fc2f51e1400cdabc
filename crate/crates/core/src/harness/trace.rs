//! Per-step session records and their CSV/JSON persistence.
//!
//! Trace CSV columns, in order:
//! `step`, `action_<param>`..., `<param>`..., `<metric>`..., `s_<metric>`...,
//! `reward`, `objective`, `best_objective`, `downtime_s`, `action_time_s`,
//! `update_time_s`.

use std::fs::{self, File, OpenOptions};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based count of environment evaluations.
    pub step: u64,
    /// Unit-interval action as emitted, before projection.
    pub action: Vec<f64>,
    pub config: Vec<f64>,
    /// Raw metrics in schema order.
    pub metrics: Vec<f64>,
    pub state: Vec<f64>,
    pub reward: f64,
    pub objective: f64,
    pub best_objective: f64,
    pub best_config: Vec<f64>,
    pub downtime_s: f64,
    pub measurement_s: f64,
    /// Applying the configuration and collecting metrics.
    pub action_time_s: f64,
    /// Agent training after the step.
    pub update_time_s: f64,
    pub projected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub method: String,
    pub env: String,
    pub seed: u64,
    pub param_names: Vec<String>,
    pub metric_names: Vec<String>,
    pub weights: Vec<f64>,
    /// Method settings as free-form JSON.
    pub settings: serde_json::Value,
    pub code_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningTrace {
    pub meta: TraceMeta,
    pub records: Vec<StepRecord>,
}

impl TuningTrace {
    pub fn new(meta: TraceMeta) -> Self {
        Self {
            meta,
            records: Vec::new(),
        }
    }

    pub fn best(&self) -> Option<&StepRecord> {
        // ties go to the earliest step
        self.records.iter().fold(None, |acc: Option<&StepRecord>, r| match acc {
            Some(b) if b.objective >= r.objective => Some(b),
            _ => Some(r),
        })
    }

    pub fn total_downtime_s(&self) -> f64 {
        self.records.iter().map(|r| r.downtime_s).sum()
    }

    pub fn total_measurement_s(&self) -> f64 {
        self.records.iter().map(|r| r.measurement_s).sum()
    }
}

/// Session results written next to the trace as `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub meta: TraceMeta,
    pub steps: u64,
    pub recommended: Vec<f64>,
    pub best_objective: f64,
    pub best_step: u64,
    /// Objective of the default configuration: noise-free on the simulator,
    /// the first measurement otherwise.
    pub default_objective: f64,
    /// Noise-free objective of the recommendation (simulator only).
    pub recommended_true_objective: Option<f64>,
    pub total_downtime_s: f64,
    pub total_measurement_s: f64,
    pub total_cost_s: f64,
    pub wall_action_s: f64,
    pub wall_update_s: f64,
}

pub fn csv_header(meta: &TraceMeta) -> Vec<String> {
    let mut h = vec!["step".to_string()];
    h.extend(meta.param_names.iter().map(|p| format!("action_{p}")));
    h.extend(meta.param_names.iter().cloned());
    h.extend(meta.metric_names.iter().cloned());
    h.extend(meta.metric_names.iter().map(|m| format!("s_{m}")));
    for c in ["reward", "objective", "best_objective", "downtime_s", "action_time_s", "update_time_s"] {
        h.push(c.to_string());
    }
    h
}

fn csv_row(r: &StepRecord) -> Vec<String> {
    let mut row = vec![r.step.to_string()];
    for v in r.action.iter().chain(&r.config).chain(&r.metrics).chain(&r.state) {
        row.push(v.to_string());
    }
    for v in [r.reward, r.objective, r.best_objective, r.downtime_s, r.action_time_s, r.update_time_s] {
        row.push(v.to_string());
    }
    row
}

/// Streams records to a CSV file, flushing after each row so an aborted
/// session leaves a readable partial trace.
pub struct TraceWriter {
    inner: csv::Writer<File>,
}

impl TraceWriter {
    pub fn create(path: &Path, meta: &TraceMeta) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut inner = csv::Writer::from_writer(file);
        inner.write_record(csv_header(meta))?;
        inner.flush().map_err(|e| Error::io(path, e))?;
        Ok(Self { inner })
    }

    /// Appends to an existing trace whose header must match.
    pub fn append(path: &Path, meta: &TraceMeta) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != csv_header(meta) {
            return Err(Error::Definition(format!("{}: trace header does not match session", path.display())));
        }
        let file = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            inner: csv::WriterBuilder::new().has_headers(false).from_writer(file),
        })
    }

    pub fn write(&mut self, r: &StepRecord) -> Result<()> {
        self.inner.write_record(csv_row(r))?;
        self.inner.flush().map_err(|e| Error::Transport(e.to_string()))
    }
}

pub fn write_csv(path: &Path, trace: &TuningTrace) -> Result<()> {
    let mut w = TraceWriter::create(path, &trace.meta)?;
    for r in &trace.records {
        w.write(r)?;
    }
    Ok(())
}

/// Reads a trace CSV; `best_config`, `measurement_s` and `projected` are not
/// stored in the CSV and are reconstructed (measurement as action time minus downtime).
pub fn read_csv(path: &Path, meta: &TraceMeta) -> Result<TuningTrace> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != csv_header(meta) {
        return Err(Error::Definition(format!("{}: header does not match metadata", path.display())));
    }
    let (m, k) = (meta.param_names.len(), meta.metric_names.len());
    let mut trace = TuningTrace::new(meta.clone());
    let mut best: Option<(f64, Vec<f64>)> = None;
    for row in rdr.records() {
        let row = row?;
        let nums = row
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Definition(format!("{}: {e}", path.display())))?;
        let mut it = nums.into_iter();
        let step = it.next().unwrap_or(0.0) as u64;
        let mut take = |n: usize| it.by_ref().take(n).collect::<Vec<_>>();
        let action = take(m);
        let config = take(m);
        let metrics = take(k);
        let state = take(k);
        let tail = take(6);
        if tail.len() != 6 {
            return Err(Error::Definition(format!("{}: short row", path.display())));
        }
        if best.as_ref().is_none_or(|(b, _)| tail[1] > *b) {
            best = Some((tail[1], config.clone()));
        }
        trace.records.push(StepRecord {
            step,
            action,
            config,
            metrics,
            state,
            reward: tail[0],
            objective: tail[1],
            best_objective: tail[2],
            best_config: best.as_ref().map(|b| b.1.clone()).unwrap_or_default(),
            downtime_s: tail[3],
            measurement_s: (tail[4] - tail[3]).max(0.0),
            action_time_s: tail[4],
            update_time_s: tail[5],
            projected: false,
        });
    }
    Ok(trace)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Definition(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Definition(format!("{}: {e}", path.display())))
}
