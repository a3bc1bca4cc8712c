//! CSV metrics, JSON-lines traces and plot-data bundles.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::campaign::CellStats;
use crate::error::{Result, SimError};
use crate::flight::{DecisionSample, FlightResult, ObserverSample, StateSample};

pub const METRICS_COLUMNS: [&str; 9] = [
    "scenario_id",
    "seed",
    "trigger_mode",
    "ablation",
    "v_release",
    "landing_error_m",
    "release_time_s",
    "tracking_rmse_m",
    "failed",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(path: &Path, e: csv::Error) -> SimError {
    SimError::io(path, std::io::Error::other(e))
}

/// Metrics table as CSV bytes; one row per flight in the given order.
pub fn metrics_csv(results: &[FlightResult]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_COLUMNS).expect("in-memory write");
    for r in results {
        w.write_record([
            r.scenario_id.clone(),
            r.seed.to_string(),
            r.trigger.as_str().to_string(),
            r.ablation.as_str().to_string(),
            opt(r.v_release),
            opt(r.landing_error),
            opt(r.release_time),
            r.tracking_rmse.to_string(),
            r.failed().to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_metrics_csv(results: &[FlightResult], path: &Path) -> Result<()> {
    std::fs::write(path, metrics_csv(results)).map_err(|e| SimError::io(path, e))
}

/// Per-cell statistics, followed by `#`-prefixed footer lines naming failed flights.
pub fn write_summary_csv(stats: &[CellStats], results: &[FlightResult], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["scenario_id", "trigger_mode", "ablation", "flights", "failures", "rmse_m", "mean_m", "median_m", "max_m"])
        .map_err(|e| csv_err(path, e))?;
    for c in stats {
        w.write_record([
            c.scenario_id.clone(),
            c.trigger.as_str().into(),
            c.ablation.as_str().into(),
            c.flights.to_string(),
            c.failures.to_string(),
            c.rmse.to_string(),
            c.mean.to_string(),
            c.median.to_string(),
            c.max.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    let mut inner = w.into_inner().map_err(|e| SimError::io(path, e.into_error()))?;
    for r in results.iter().filter(|r| r.failed()) {
        let reason = r.failure.as_deref().unwrap_or_default().replace('\n', " ");
        writeln!(inner, "# failed: {} seed {} ({}, {}): {reason}", r.scenario_id, r.seed, r.trigger.as_str(), r.ablation.as_str())
            .map_err(|e| SimError::io(path, e))?;
    }
    inner.flush().map_err(|e| SimError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TraceRecord {
    Observer(ObserverSample),
    Decision(DecisionSample),
    State(StateSample),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Traces {
    pub observer: Vec<ObserverSample>,
    pub decision: Vec<DecisionSample>,
    pub state: Vec<StateSample>,
}

impl Traces {
    pub fn of(result: &FlightResult) -> Self {
        Self {
            observer: result.observer_trace.clone(),
            decision: result.decision_trace.clone(),
            state: result.state_log.clone(),
        }
    }
}

pub fn write_traces_jsonl(result: &FlightResult, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let records = result
        .observer_trace
        .iter()
        .cloned()
        .map(TraceRecord::Observer)
        .chain(result.decision_trace.iter().cloned().map(TraceRecord::Decision))
        .chain(result.state_log.iter().cloned().map(TraceRecord::State));
    for rec in records {
        serde_json::to_writer(&mut w, &rec).map_err(|e| SimError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| SimError::io(path, e))?;
    }
    w.flush().map_err(|e| SimError::io(path, e))
}

pub fn read_traces_jsonl(path: &Path) -> Result<Traces> {
    let file = File::open(path).map_err(|e| SimError::io(path, e))?;
    let mut out = Traces::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| SimError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord =
            serde_json::from_str(&line).map_err(|e| SimError::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?;
        match rec {
            TraceRecord::Observer(s) => out.observer.push(s),
            TraceRecord::Decision(s) => out.decision.push(s),
            TraceRecord::State(s) => out.state.push(s),
        }
    }
    Ok(out)
}

/// Column-oriented time series for plotting tracking and observer behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotBundle {
    pub scenario_id: String,
    pub seed: u64,
    pub state_t: Vec<f64>,
    pub position: Vec<[f64; 3]>,
    pub reference: Vec<[f64; 3]>,
    pub observer_t: Vec<f64>,
    pub f_ext_hat: Vec<[f64; 3]>,
    pub release_time: Option<f64>,
    pub landing_point: Option<[f64; 3]>,
}

impl PlotBundle {
    pub fn of(result: &FlightResult) -> Self {
        Self {
            scenario_id: result.scenario_id.clone(),
            seed: result.seed,
            state_t: result.state_log.iter().map(|s| s.t).collect(),
            position: result.state_log.iter().map(|s| s.position).collect(),
            reference: result.state_log.iter().map(|s| s.reference).collect(),
            observer_t: result.observer_trace.iter().map(|s| s.t).collect(),
            f_ext_hat: result.observer_trace.iter().map(|s| s.f).collect(),
            release_time: result.release_time,
            landing_point: result.landing_point,
        }
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| SimError::io(path, e.into()))?;
    std::fs::write(path, text).map_err(|e| SimError::io(path, e))
}

/// Everything `fly` produces, written into `dir`.
pub fn export_flight(result: &FlightResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    let mut summary = result.clone();
    summary.observer_trace.clear();
    summary.decision_trace.clear();
    summary.state_log.clear();
    write_json(&summary, &dir.join("flight.json"))?;
    write_traces_jsonl(result, &dir.join("traces.jsonl"))?;
    write_json(&PlotBundle::of(result), &dir.join("plot.json"))?;
    write_metrics_csv(std::slice::from_ref(result), &dir.join("metrics.csv"))
}
