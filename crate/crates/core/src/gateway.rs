//! Discrete-time model of the interdomain gateway: one output queue per
//! performance class, all sharing a single link whose capacity is split
//! into per-queue flushing rates.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GatewayError {
    #[error("bandwidth budget violated: rates sum to {sum}, link capacity is {link_capacity}")]
    BudgetViolated { sum: f64, link_capacity: f64 },
    #[error("starvation floor violated: queue {queue} rate {rate} is below min_rate {min_rate}")]
    FloorViolated { queue: usize, rate: f64, min_rate: f64 },
    #[error("expected {expected} rates, got {got}")]
    RateCount { expected: usize, got: usize },
    #[error("invalid gateway sizing: `{field}` {reason}")]
    Sizing { field: &'static str, reason: String },
    #[error("empty measurement window")]
    EmptyWindow,
}

/// Occupancy label of a queue. Occupancy equal to the threshold is still
/// below threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QueueLabel {
    #[serde(rename = "BT")]
    BelowThreshold,
    #[serde(rename = "AT")]
    AboveThreshold,
}

impl QueueLabel {
    pub fn is_above(self) -> bool {
        self == QueueLabel::AboveThreshold
    }

    pub fn classify(occupancy: u64, threshold: u64) -> Self {
        if occupancy <= threshold {
            QueueLabel::BelowThreshold
        } else {
            QueueLabel::AboveThreshold
        }
    }
}

impl fmt::Display for QueueLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueueLabel::BelowThreshold => "BT",
            QueueLabel::AboveThreshold => "AT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayQueue {
    pub index: usize,
    /// Max occupancy, packets.
    pub capacity: u64,
    pub occupancy: u64,
    /// Trigger level, packets.
    pub threshold: u64,
    /// Packets per second currently allocated out of the link.
    pub flush_rate: f64,
    /// 1 is the highest priority.
    pub priority: u32,
    pub drops: u64,
    /// Fraction of a packet of service owed from earlier steps.
    service_carry: f64,
}

impl GatewayQueue {
    pub fn new(index: usize, capacity: u64, threshold: u64, flush_rate: f64, priority: u32) -> Self {
        Self { index, capacity, occupancy: 0, threshold, flush_rate, priority, drops: 0, service_carry: 0.0 }
    }

    pub fn label(&self) -> QueueLabel {
        queue_label(self)
    }
}

pub fn queue_label(queue: &GatewayQueue) -> QueueLabel {
    QueueLabel::classify(queue.occupancy, queue.threshold)
}

/// Gateway dimensions. Thresholds and the starvation floor are given as
/// fractions of the queue capacity and link capacity respectively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatewaySizing {
    pub queue_count: usize,
    pub capacity: u64,
    pub threshold_fraction: f64,
    pub link_capacity: f64,
    pub min_rate_fraction: f64,
    pub dt: f64,
}

impl Default for GatewaySizing {
    fn default() -> Self {
        Self {
            queue_count: 3,
            capacity: 1000,
            threshold_fraction: 0.5,
            link_capacity: 300.0,
            min_rate_fraction: 0.01,
            dt: 0.1,
        }
    }
}

impl GatewaySizing {
    pub fn threshold_packets(&self) -> u64 {
        ((self.capacity as f64) * self.threshold_fraction).floor() as u64
    }

    pub fn min_rate(&self) -> f64 {
        self.link_capacity * self.min_rate_fraction
    }

    /// Every broken sizing constraint, as (field, reason).
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.queue_count == 0 {
            out.push(("queue_count", "must be at least 1".to_string()));
        }
        if self.capacity == 0 {
            out.push(("capacity", "must be at least 1 packet".to_string()));
        }
        if !(self.threshold_fraction > 0.0 && self.threshold_fraction <= 1.0) {
            out.push(("threshold_fraction", format!("{} not in (0, 1]", self.threshold_fraction)));
        } else if self.capacity > 0 && self.threshold_packets() == 0 {
            out.push(("threshold_fraction", "threshold rounds down to 0 packets".to_string()));
        }
        if !(self.link_capacity > 0.0 && self.link_capacity.is_finite()) {
            out.push(("link_capacity", format!("{} must be positive and finite", self.link_capacity)));
        }
        if !(self.min_rate_fraction >= 0.0) {
            out.push(("min_rate_fraction", format!("{} must be >= 0", self.min_rate_fraction)));
        } else if self.queue_count > 0 && self.min_rate_fraction * self.queue_count as f64 > 1.0 {
            out.push(("min_rate_fraction", format!("floors of {} queues exceed the link", self.queue_count)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            out.push(("dt", format!("{} must be positive", self.dt)));
        }
        out
    }
}

/// Per-step accounting. For every queue
/// `occupancy = previous + arrivals - departures - drops`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub dt: f64,
    pub arrivals: Vec<u64>,
    pub departures: Vec<u64>,
    pub drops: Vec<u64>,
    pub occupancy: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gateway {
    pub queues: Vec<GatewayQueue>,
    /// Total flushing budget, packets/s.
    pub link_capacity: f64,
    pub min_rate: f64,
    /// Seconds.
    pub clock: f64,
}

impl Gateway {
    /// Builds a gateway with the link split evenly; queue `i` gets priority `i + 1`.
    pub fn new(sizing: &GatewaySizing) -> Result<Self, GatewayError> {
        if let Some((field, reason)) = sizing.violations().into_iter().next() {
            return Err(GatewayError::Sizing { field, reason });
        }
        let n = sizing.queue_count;
        let share = sizing.link_capacity / n as f64;
        let threshold = sizing.threshold_packets();
        let queues = (0..n).map(|i| GatewayQueue::new(i, sizing.capacity, threshold, share, i as u32 + 1)).collect();
        Ok(Self { queues, link_capacity: sizing.link_capacity, min_rate: sizing.min_rate(), clock: 0.0 })
    }

    pub fn len(&self) -> usize {
        self.queues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queues.is_empty()
    }

    pub fn flush_rates(&self) -> Vec<f64> {
        self.queues.iter().map(|q| q.flush_rate).collect()
    }

    pub fn occupancies(&self) -> Vec<u64> {
        self.queues.iter().map(|q| q.occupancy).collect()
    }

    pub fn thresholds(&self) -> Vec<u64> {
        self.queues.iter().map(|q| q.threshold).collect()
    }

    pub fn labels(&self) -> Vec<QueueLabel> {
        self.queues.iter().map(queue_label).collect()
    }

    pub fn any_above_threshold(&self) -> bool {
        self.queues.iter().any(|q| q.label().is_above())
    }

    /// Checks a rate vector against the budget and the starvation floor.
    pub fn check_rates(&self, rates: &[f64]) -> Result<(), GatewayError> {
        if rates.len() != self.queues.len() {
            return Err(GatewayError::RateCount { expected: self.queues.len(), got: rates.len() });
        }
        for (queue, &rate) in rates.iter().enumerate() {
            if !(rate >= self.min_rate) {
                return Err(GatewayError::FloorViolated { queue, rate, min_rate: self.min_rate });
            }
        }
        let sum: f64 = rates.iter().sum();
        if !((sum - self.link_capacity).abs() <= 1e-9 * self.link_capacity) {
            return Err(GatewayError::BudgetViolated { sum, link_capacity: self.link_capacity });
        }
        Ok(())
    }

    /// Replaces every flush rate at once, or none of them.
    pub fn set_flush_rates(&mut self, rates: &[f64]) -> Result<(), GatewayError> {
        self.check_rates(rates)?;
        for (q, &r) in self.queues.iter_mut().zip(rates) {
            q.flush_rate = r;
        }
        Ok(())
    }

    /// Advances the gateway by `dt` seconds.
    ///
    /// Each queue is served first (service may reach packets that arrive
    /// within the step), then arrivals are admitted and whatever exceeds the
    /// capacity is tail-dropped.
    pub fn step<R: Rng + ?Sized>(&mut self, dt: f64, arrival_rates: &[f64], rng: &mut R) -> StepReport {
        assert!(dt > 0.0, "dt must be positive");
        assert_eq!(arrival_rates.len(), self.queues.len(), "one arrival rate per queue");
        let n = self.queues.len();
        let mut report = StepReport {
            dt,
            arrivals: Vec::with_capacity(n),
            departures: Vec::with_capacity(n),
            drops: Vec::with_capacity(n),
            occupancy: Vec::with_capacity(n),
        };
        for (q, &rate) in self.queues.iter_mut().zip(arrival_rates) {
            let arrivals = sample_poisson(rate * dt, rng);
            let (departures, dropped) = q.advance(arrivals, dt);
            report.arrivals.push(arrivals);
            report.departures.push(departures);
            report.drops.push(dropped);
            report.occupancy.push(q.occupancy);
        }
        self.clock += dt;
        report
    }
}

impl GatewayQueue {
    /// Applies one step with a known arrival count; returns (departures, drops).
    pub fn advance(&mut self, arrivals: u64, dt: f64) -> (u64, u64) {
        self.service_carry += self.flush_rate * dt;
        let budget = self.service_carry.floor();
        // unused service does not bank beyond the fractional part
        self.service_carry -= budget;
        let budget = budget as u64;
        let backlog = self.occupancy + arrivals;
        let departures = backlog.min(budget);
        let dropped = (backlog - departures).saturating_sub(self.capacity);
        self.occupancy = backlog - departures - dropped;
        self.drops += dropped;
        (departures, dropped)
    }
}

fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(mean).expect("positive finite Poisson mean");
    dist.sample(rng) as u64
}

/// Slice parameters observed over a window of steps. `delay` is `None` when
/// nothing departed, since the Little's-law estimate is then undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredParams {
    /// Achieved departures per second.
    pub bandwidth: f64,
    /// Dropped / arrived.
    pub loss: f64,
    /// Mean occupancy divided by departure rate, seconds.
    pub delay: Option<f64>,
}

/// Folds per-queue totals into measured parameters.
pub(crate) fn params_from_totals(
    duration: f64,
    arrivals: u64,
    departures: u64,
    drops: u64,
    occupancy_time: f64,
) -> MeasuredParams {
    let bandwidth = departures as f64 / duration;
    let loss = if arrivals == 0 { 0.0 } else { (drops as f64 / arrivals as f64).min(1.0) };
    let delay = if departures == 0 { None } else { Some((occupancy_time / duration) / bandwidth) };
    MeasuredParams { bandwidth, loss, delay }
}

pub fn measured_params(window: &[StepReport]) -> Result<Vec<MeasuredParams>, GatewayError> {
    let first = window.first().ok_or(GatewayError::EmptyWindow)?;
    let n = first.occupancy.len();
    let duration: f64 = window.iter().map(|r| r.dt).sum();
    Ok((0..n)
        .map(|q| {
            let arrivals = window.iter().map(|r| r.arrivals[q]).sum();
            let departures = window.iter().map(|r| r.departures[q]).sum();
            let drops = window.iter().map(|r| r.drops[q]).sum();
            let occupancy_time = window.iter().map(|r| r.occupancy[q] as f64 * r.dt).sum();
            params_from_totals(duration, arrivals, departures, drops, occupancy_time)
        })
        .collect())
}
