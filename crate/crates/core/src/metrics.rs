//! Per-step time series, run summaries and their CSV/JSON exports.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{params_from_totals, MeasuredParams, QueueLabel};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty series")]
    EmptySeries,
    #[error("expected {expected} thresholds, got {got}")]
    ThresholdCount { expected: usize, got: usize },
    #[error("malformed csv: {0}")]
    Csv(String),
    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
}

/// One simulation step as seen after the step completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesRow {
    /// Simulation time at the end of the step, seconds.
    pub t: f64,
    pub occupancy: Vec<u64>,
    pub flush_rate: Vec<f64>,
    /// Drops during this step.
    pub drops: Vec<u64>,
    pub arrivals: Vec<u64>,
    pub departures: Vec<u64>,
    pub agent_active: bool,
    /// Attempt number within the running episode; 0 when the agent is idle.
    pub attempts: usize,
}

impl TimeSeriesRow {
    pub fn queues(&self) -> usize {
        self.occupancy.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSummary {
    pub queue: usize,
    pub at_fraction: f64,
    pub total_drops: u64,
    pub measured: MeasuredParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub queues: Vec<QueueSummary>,
    pub agent_invocations: usize,
    pub mean_attempts: f64,
    /// Fraction of episodes that ended with every queue below threshold;
    /// `None` when the agent never ran.
    pub convergence_rate: Option<f64>,
}

/// Episode boundaries recovered from a series: (first row, last row).
pub fn episodes(series: &[TimeSeriesRow]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for (i, row) in series.iter().enumerate() {
        if !row.agent_active {
            continue;
        }
        match out.last_mut() {
            Some((_, end)) if *end + 1 == i && row.attempts > 1 => *end = i,
            _ => out.push((i, i)),
        }
    }
    out
}

fn all_below(row: &TimeSeriesRow, thresholds: &[u64]) -> bool {
    row.occupancy.iter().zip(thresholds).all(|(o, t)| !QueueLabel::classify(*o, *t).is_above())
}

/// Statistics over a whole series. Rows are assumed to start at t = 0 and
/// each row covers the time since the previous one.
pub fn summarize(series: &[TimeSeriesRow], thresholds: &[u64]) -> Result<RunSummary, MetricsError> {
    let first = series.first().ok_or(MetricsError::EmptySeries)?;
    let n = first.queues();
    if thresholds.len() != n {
        return Err(MetricsError::ThresholdCount { expected: n, got: thresholds.len() });
    }
    let duration = series.last().map(|r| r.t).unwrap_or(0.0);
    let steps = series.len() as f64;

    let queues = (0..n)
        .map(|q| {
            let mut above = 0usize;
            let (mut arrivals, mut departures, mut drops) = (0u64, 0u64, 0u64);
            let mut occupancy_time = 0.0;
            let mut prev_t = 0.0;
            for row in series {
                if QueueLabel::classify(row.occupancy[q], thresholds[q]).is_above() {
                    above += 1;
                }
                arrivals += row.arrivals.get(q).copied().unwrap_or(0);
                departures += row.departures.get(q).copied().unwrap_or(0);
                drops += row.drops[q];
                occupancy_time += row.occupancy[q] as f64 * (row.t - prev_t);
                prev_t = row.t;
            }
            QueueSummary {
                queue: q,
                at_fraction: above as f64 / steps,
                total_drops: drops,
                measured: params_from_totals(duration, arrivals, departures, drops, occupancy_time),
            }
        })
        .collect();

    let eps = episodes(series);
    let invocations = eps.len();
    let (mean_attempts, convergence_rate) = if invocations == 0 {
        (0.0, None)
    } else {
        let attempts: usize = eps.iter().map(|(_, end)| series[*end].attempts).sum();
        let converged = eps.iter().filter(|(_, end)| all_below(&series[*end], thresholds)).count();
        (attempts as f64 / invocations as f64, Some(converged as f64 / invocations as f64))
    };

    Ok(RunSummary { queues, agent_invocations: invocations, mean_attempts, convergence_rate })
}

pub fn csv_header(queues: usize) -> Vec<String> {
    let mut header = vec!["t".to_string()];
    for q in 0..queues {
        header.push(format!("q{q}_occ"));
        header.push(format!("q{q}_rate"));
        header.push(format!("q{q}_drops"));
    }
    header.push("agent_active".into());
    header.push("attempts".into());
    header
}

/// `t,q0_occ,q0_rate,q0_drops,...,agent_active,attempts`, LF line endings,
/// floats in shortest round-trip form. An empty series yields a
/// single-queue header.
pub fn export_csv(series: &[TimeSeriesRow]) -> Vec<u8> {
    let queues = series.first().map_or(1, TimeSeriesRow::queues);
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(csv_header(queues)).expect("in-memory write");
    for row in series {
        let mut rec = Vec::with_capacity(3 * queues + 3);
        rec.push(row.t.to_string());
        for q in 0..queues {
            rec.push(row.occupancy[q].to_string());
            rec.push(row.flush_rate[q].to_string());
            rec.push(row.drops[q].to_string());
        }
        rec.push(u8::from(row.agent_active).to_string());
        rec.push(row.attempts.to_string());
        w.write_record(&rec).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Reads back what [`export_csv`] wrote. Arrival and departure counts are not
/// part of the CSV and come back empty.
pub fn parse_csv(bytes: &[u8]) -> Result<Vec<TimeSeriesRow>, MetricsError> {
    let bad = |e: &dyn std::fmt::Display| MetricsError::Csv(e.to_string());
    let mut r = csv::ReaderBuilder::new().from_reader(bytes);
    let header = r.headers().map_err(|e| bad(&e))?.clone();
    if header.len() < 3 || (header.len() - 3) % 3 != 0 {
        return Err(MetricsError::Csv(format!("{} columns is not 3N + 3", header.len())));
    }
    let queues = (header.len() - 3) / 3;
    let expected = csv_header(queues);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(MetricsError::Csv("unexpected header".into()));
    }

    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(&e))?;
        let field = |i: usize| rec.get(i).ok_or_else(|| MetricsError::Csv(format!("missing column {i}")));
        let float = |i: usize| field(i)?.parse::<f64>().map_err(|e| bad(&e));
        let int = |i: usize| field(i)?.parse::<u64>().map_err(|e| bad(&e));
        let mut row = TimeSeriesRow {
            t: float(0)?,
            occupancy: Vec::with_capacity(queues),
            flush_rate: Vec::with_capacity(queues),
            drops: Vec::with_capacity(queues),
            arrivals: Vec::new(),
            departures: Vec::new(),
            agent_active: false,
            attempts: 0,
        };
        for q in 0..queues {
            row.occupancy.push(int(1 + 3 * q)?);
            row.flush_rate.push(float(2 + 3 * q)?);
            row.drops.push(int(3 + 3 * q)?);
        }
        row.agent_active = match field(1 + 3 * queues)? {
            "0" => false,
            "1" => true,
            other => return Err(MetricsError::Csv(format!("agent_active `{other}`"))),
        };
        row.attempts = int(2 + 3 * queues)? as usize;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Serialize)]
struct ExportDocument<'a, C: Serialize> {
    config: &'a C,
    summary: &'a RunSummary,
    series: &'a [TimeSeriesRow],
}

/// A parsed JSON export. The config stays untyped so any producer's echo
/// can be read back.
#[derive(Debug, Deserialize)]
pub struct ExportedRun {
    pub config: serde_json::Value,
    pub summary: RunSummary,
    pub series: Vec<TimeSeriesRow>,
}

/// One document with keys `config`, `summary`, `series`, in that order.
pub fn export_json<C: Serialize>(series: &[TimeSeriesRow], summary: &RunSummary, config: &C) -> Vec<u8> {
    let mut out =
        serde_json::to_vec_pretty(&ExportDocument { config, summary, series }).expect("run documents serialize");
    out.push(b'\n');
    out
}

pub fn parse_json(bytes: &[u8]) -> Result<ExportedRun, MetricsError> {
    Ok(serde_json::from_slice(bytes)?)
}

/// Mean and sample standard deviation of one statistic across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stddev: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Stat { mean: 0.0, stddev: 0.0, n };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let stddev =
            if n < 2 { 0.0 } else { (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
        Stat { mean, stddev, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueAggregate {
    pub queue: usize,
    pub at_fraction: Stat,
    pub total_drops: Stat,
    pub bandwidth: Stat,
    pub loss: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAggregate {
    pub runs: usize,
    pub queues: Vec<QueueAggregate>,
    pub agent_invocations: Stat,
    pub mean_attempts: Stat,
    /// Runs in which the agent never ran are left out.
    pub convergence_rate: Stat,
}

pub fn aggregate(summaries: &[RunSummary]) -> SweepAggregate {
    let n = summaries.first().map_or(0, |s| s.queues.len());
    let per_queue = |q: usize, f: &dyn Fn(&QueueSummary) -> f64| {
        Stat::of(&summaries.iter().map(|s| f(&s.queues[q])).collect::<Vec<_>>())
    };
    let queues = (0..n)
        .map(|q| QueueAggregate {
            queue: q,
            at_fraction: per_queue(q, &|s| s.at_fraction),
            total_drops: per_queue(q, &|s| s.total_drops as f64),
            bandwidth: per_queue(q, &|s| s.measured.bandwidth),
            loss: per_queue(q, &|s| s.measured.loss),
        })
        .collect();
    let global = |f: &dyn Fn(&RunSummary) -> Option<f64>| Stat::of(&summaries.iter().filter_map(f).collect::<Vec<_>>());
    SweepAggregate {
        runs: summaries.len(),
        queues,
        agent_invocations: global(&|s| Some(s.agent_invocations as f64)),
        mean_attempts: global(&|s| Some(s.mean_attempts)),
        convergence_rate: global(&|s| s.convergence_rate),
    }
}
