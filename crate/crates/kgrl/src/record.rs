//! Run records, training curves and weight traces.
//!
//! `curves.csv` header: `seed,step,source,episodes,mean_return,min_return,success_rate`
//! where `source` is `train` (episodes finished since the previous row) or
//! `eval` (fresh evaluation episodes).
//!
//! `trace.csv` header: `step,component,raw,weight,chosen,action,reward,event`
//! with one row per step and mixture component; `chosen` is 1 on the row of
//! the component the step was attributed to.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use kgrl_core::algo::{EvalSummary, TraceStep};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::{io_err, Result};

pub const RUN_RECORD_SCHEMA: &str = include_str!("../schemas/run_record.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    pub episodes: usize,
    pub mean_return: f64,
    pub min_return: f64,
    pub success_rate: f64,
}

impl EvalPoint {
    pub fn new(step: u64, s: &EvalSummary) -> Self {
        Self {
            step,
            episodes: s.episodes,
            mean_return: s.mean_return,
            min_return: s.min_return,
            success_rate: s.success_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub git_describe: String,
    pub env_steps: u64,
    /// Episodes finished during training, one row per log interval.
    pub train: Vec<EvalPoint>,
    pub evals: Vec<EvalPoint>,
    /// First training row at or above the configured threshold.
    pub threshold_step: Option<u64>,
    pub checkpoint: PathBuf,
    pub packs: Vec<PathBuf>,
}

impl RunRecord {
    pub fn final_eval(&self) -> Option<&EvalPoint> {
        self.evals.last()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub seed: u64,
    pub step: u64,
    pub source: String,
    pub episodes: usize,
    pub mean_return: f64,
    pub min_return: f64,
    pub success_rate: f64,
}

pub fn curve_rows(record: &RunRecord) -> Vec<CurveRow> {
    let row = |source: &str, p: &EvalPoint| CurveRow {
        seed: record.seed,
        step: p.step,
        source: source.into(),
        episodes: p.episodes,
        mean_return: p.mean_return,
        min_return: p.min_return,
        success_rate: p.success_rate,
    };
    let mut rows: Vec<CurveRow> = record.train.iter().map(|p| row("train", p)).collect();
    rows.extend(record.evals.iter().map(|p| row("eval", p)));
    rows.sort_by_key(|r| (r.step, r.source != "train"));
    rows
}

pub fn write_curves(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_curves(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub component: String,
    pub raw: f64,
    pub weight: f64,
    pub chosen: u8,
    pub action: usize,
    pub reward: f64,
    pub event: String,
}

/// Per-step raw and normalized weights of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTrace {
    pub components: Vec<String>,
    pub steps: Vec<TraceStep>,
}

impl WeightTrace {
    pub fn rows(&self) -> Vec<TraceRow> {
        let mut out = Vec::new();
        for s in &self.steps {
            let event = s
                .event
                .and_then(|e| serde_json::to_value(e).ok())
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            for (i, name) in self.components.iter().enumerate() {
                out.push(TraceRow {
                    step: s.step,
                    component: name.clone(),
                    raw: s.trace.raw[i],
                    weight: s.trace.weights[i],
                    chosen: (s.trace.chosen == i) as u8,
                    action: s.action,
                    reward: s.reward,
                    event: event.clone(),
                });
            }
        }
        out
    }

    /// Index of the highest-weight component at every step.
    pub fn dominant(&self) -> Vec<usize> {
        self.steps
            .iter()
            .map(|s| kgrl_core::math::argmax(&s.trace.weights))
            .collect()
    }

    /// Steps at which the dominant component differs from the previous step's.
    pub fn switches(&self) -> Vec<usize> {
        let d = self.dominant();
        (1..d.len())
            .filter(|&i| d[i] != d[i - 1])
            .map(|i| self.steps[i].step)
            .collect()
    }
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Appends JSON-lines records.
#[derive(Debug)]
pub struct JsonLines {
    file: fs::File,
    path: PathBuf,
}

impl JsonLines {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            file: fs::File::create(path).map_err(io_err(path))?,
            path: path.to_path_buf(),
        })
    }

    pub fn write<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let line = serde_json::to_string(value)?;
        writeln!(self.file, "{line}").map_err(io_err(&self.path))
    }
}
