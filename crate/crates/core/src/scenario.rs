//! Overload scenarios: a phased traffic schedule applied to a subset of the
//! queues while the agent keeps every queue below its threshold.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentConfig, EpisodeDriver, SarsaAgent};
use crate::gateway::{Gateway, GatewayError, GatewaySizing, StepReport};
use crate::metrics::{summarize, MetricsError, RunSummary, TimeSeriesRow};

/// Minimum expected packet production per queue for a run to count.
pub const MIN_PACKETS_PER_QUEUE: f64 = 1e4;

/// Tolerance used when locating `t` relative to phase boundaries.
const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {}", .0.iter().map(|(f, m)| format!("`{f}` {m}")).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<(String, String)>),
    #[error("process cycle too short: queue {queue} expects {expected:.0} packets, need at least {required:.0}")]
    ProcessCycleTooShort { queue: usize, expected: f64, required: f64 },
    #[error("t = {t} outside the run [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub multiplier: f64,
    /// Seconds.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverloadSchedule {
    pub phases: Vec<Phase>,
}

impl OverloadSchedule {
    pub const DEFAULT_MULTIPLIERS: [f64; 4] = [1.3, 1.5, 1.8, 2.0];

    pub fn uniform(multipliers: &[f64], phase_duration: f64) -> Self {
        Self { phases: multipliers.iter().map(|&multiplier| Phase { multiplier, duration: phase_duration }).collect() }
    }

    pub fn total_duration(&self) -> f64 {
        self.phases.iter().map(|p| p.duration).sum()
    }

    /// Start of each phase relative to the schedule start.
    pub fn phase_starts(&self) -> Vec<f64> {
        self.phases
            .iter()
            .scan(0.0, |acc, p| {
                let start = *acc;
                *acc += p.duration;
                Some(start)
            })
            .collect()
    }

    /// Phase active at `elapsed` seconds into the schedule. Boundaries belong
    /// to the phase that starts there.
    pub fn phase_at(&self, elapsed: f64) -> Option<usize> {
        let mut start = 0.0;
        for (i, p) in self.phases.iter().enumerate() {
            let end = start + p.duration;
            if elapsed + BOUNDARY_EPS >= start && elapsed + BOUNDARY_EPS < end {
                return Some(i);
            }
            start = end;
        }
        None
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.phases.is_empty() {
            out.push("has no phases".to_string());
        }
        for (i, p) in self.phases.iter().enumerate() {
            if !(p.multiplier > 1.0 && p.multiplier.is_finite()) {
                out.push(format!("phase {i} multiplier {} must exceed 1", p.multiplier));
            }
            if !(p.duration > 0.0 && p.duration.is_finite()) {
                out.push(format!("phase {i} duration {} must be positive", p.duration));
            }
        }
        if self.phases.windows(2).any(|w| !(w[1].multiplier > w[0].multiplier)) {
            out.push("multipliers must strictly increase".to_string());
        }
        out
    }
}

impl Default for OverloadSchedule {
    fn default() -> Self {
        Self::uniform(&Self::DEFAULT_MULTIPLIERS, 60.0)
    }
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: u32,
    pub overloaded_queues: Vec<usize>,
    /// Offered load of a queue outside overload, packets/s.
    pub nominal_rate: f64,
    pub schedule: OverloadSchedule,
    /// Nominal-load seconds before the first phase.
    pub lead_in: f64,
    /// Nominal-load seconds after the last phase.
    pub tail: f64,
    pub gateway: GatewaySizing,
    pub agent: AgentConfig,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Scenario `id` overloads queues `0..id`.
    pub fn default_overloaded(id: u32) -> Vec<usize> {
        (0..id as usize).collect()
    }

    pub fn new(id: u32, seed: u64) -> Self {
        Self {
            id,
            overloaded_queues: Self::default_overloaded(id),
            nominal_rate: 90.0,
            schedule: OverloadSchedule::default(),
            lead_in: 0.0,
            tail: 0.0,
            gateway: GatewaySizing::default(),
            agent: AgentConfig::default(),
            seed,
        }
    }

    pub fn duration(&self) -> f64 {
        self.lead_in + self.schedule.total_duration() + self.tail
    }

    pub fn total_steps(&self) -> usize {
        (self.duration() / self.gateway.dt).round() as usize
    }

    /// Absolute start time of each phase.
    pub fn phase_starts(&self) -> Vec<f64> {
        self.schedule.phase_starts().into_iter().map(|s| s + self.lead_in).collect()
    }

    pub fn is_overloaded(&self, queue: usize) -> bool {
        self.overloaded_queues.contains(&queue)
    }

    /// Every broken invariant as (field, message), without the process-cycle check.
    pub fn violations(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut push = |f: &str, m: String| out.push((f.to_string(), m));
        for (f, m) in self.gateway.violations() {
            push(&format!("gateway.{f}"), m);
        }
        for (f, m) in self.agent.violations(self.gateway.queue_count) {
            push(&format!("agent.{f}"), m);
        }
        for m in self.schedule.violations() {
            push("scenario.schedule", m);
        }
        if !(1..=3).contains(&self.id) {
            push("scenario.id", format!("{} not in {{1, 2, 3}}", self.id));
        }
        let mut seen = self.overloaded_queues.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.overloaded_queues.len() {
            push("scenario.overloaded_queues", "contains duplicates".into());
        }
        if seen.len() != self.id as usize {
            push(
                "scenario.overloaded_queues",
                format!("{} queues listed but scenario {} overloads {}", seen.len(), self.id, self.id),
            );
        }
        if let Some(q) = seen.iter().find(|q| **q >= self.gateway.queue_count) {
            push(
                "scenario.overloaded_queues",
                format!("queue {q} does not exist (gateway has {})", self.gateway.queue_count),
            );
        }
        if !(self.nominal_rate >= 0.0 && self.nominal_rate.is_finite()) {
            push("scenario.nominal_rate", format!("{} must be non-negative", self.nominal_rate));
        }
        for (name, v) in [("scenario.lead_in", self.lead_in), ("scenario.tail", self.tail)] {
            if !(v >= 0.0 && v.is_finite()) {
                push(name, format!("{v} must be non-negative"));
            }
        }
        out
    }

    /// Expected packets per queue must reach [`MIN_PACKETS_PER_QUEUE`].
    pub fn check_process_cycle(&self) -> Result<(), ScenarioError> {
        let duration = self.duration();
        for queue in 0..self.gateway.queue_count {
            // phased queues only ever get more, so nominal load bounds every queue
            let expected = self.nominal_rate * duration;
            if expected < MIN_PACKETS_PER_QUEUE {
                return Err(ScenarioError::ProcessCycleTooShort { queue, expected, required: MIN_PACKETS_PER_QUEUE });
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let v = self.violations();
        if !v.is_empty() {
            return Err(ScenarioError::Invalid(v));
        }
        self.check_process_cycle()
    }
}

/// Offered load of `queue` at time `t`: nominal, or nominal times the active
/// phase multiplier for overloaded queues.
pub fn arrival_rate_at(spec: &ScenarioSpec, queue: usize, t: f64) -> Result<f64, ScenarioError> {
    let duration = spec.duration();
    if !(t >= 0.0 && t <= duration + BOUNDARY_EPS) {
        return Err(ScenarioError::TimeOutOfRange { t, duration });
    }
    if !spec.is_overloaded(queue) {
        return Ok(spec.nominal_rate);
    }
    Ok(match spec.schedule.phase_at(t - spec.lead_in) {
        Some(i) => spec.nominal_rate * spec.schedule.phases[i].multiplier,
        None => spec.nominal_rate,
    })
}

fn arrival_rates(spec: &ScenarioSpec, t: f64) -> Vec<f64> {
    (0..spec.gateway.queue_count)
        .map(|q| arrival_rate_at(spec, q, t).expect("step start lies inside the run"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Index of the first step the episode drove.
    pub start_step: usize,
    pub attempts: usize,
    pub converged: bool,
    /// Cut short by the end of the run.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub spec: ScenarioSpec,
    pub seed: u64,
    pub series: Vec<TimeSeriesRow>,
    pub summary: RunSummary,
    pub episodes: Vec<EpisodeRecord>,
    pub thresholds: Vec<u64>,
}

fn record(series: &mut Vec<TimeSeriesRow>, t: f64, gateway: &Gateway, report: &StepReport, attempts: usize) {
    series.push(TimeSeriesRow {
        t,
        occupancy: report.occupancy.clone(),
        flush_rate: gateway.flush_rates(),
        drops: report.drops.clone(),
        arrivals: report.arrivals.clone(),
        departures: report.departures.clone(),
        agent_active: attempts > 0,
        attempts,
    });
}

struct LiveRun<'a> {
    spec: &'a ScenarioSpec,
    step: usize,
    series: Vec<TimeSeriesRow>,
}

impl LiveRun<'_> {
    fn step_start(&self) -> f64 {
        self.step as f64 * self.spec.gateway.dt
    }
}

impl EpisodeDriver for LiveRun<'_> {
    fn arrival_rates(&mut self) -> Vec<f64> {
        arrival_rates(self.spec, self.step_start())
    }

    fn after_step(&mut self, gateway: &Gateway, report: &StepReport, attempt: usize) {
        self.step += 1;
        let t = self.step_start();
        record(&mut self.series, t, gateway, report, attempt);
    }
}

/// Steps the gateway over the whole schedule. Whenever a step leaves some
/// queue above threshold the agent takes over for one episode; the next
/// episode can start on the step after the previous one ends.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<RunResult, ScenarioError> {
    spec.validate()?;
    let mut gateway = Gateway::new(&spec.gateway)?;
    let thresholds = gateway.thresholds();
    let mut agent = SarsaAgent::new(spec.agent.clone(), spec.gateway.queue_count);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dt = spec.gateway.dt;
    let total = spec.total_steps();

    let mut run = LiveRun { spec, step: 0, series: Vec::with_capacity(total) };
    let mut episodes = Vec::new();
    while run.step < total {
        if gateway.any_above_threshold() {
            let start_step = run.step;
            let cap = total - run.step;
            let out = agent.control_episode(&mut gateway, dt, &mut rng, &mut run, cap);
            episodes.push(EpisodeRecord {
                start_step,
                attempts: out.attempts,
                converged: out.converged,
                truncated: !out.converged && out.attempts < spec.agent.max_attempts,
            });
        } else {
            let rates = run.arrival_rates();
            let report = gateway.step(dt, &rates, &mut rng);
            run.step += 1;
            let t = run.step_start();
            record(&mut run.series, t, &gateway, &report, 0);
        }
    }

    let summary = summarize(&run.series, &thresholds)?;
    Ok(RunResult { spec: spec.clone(), seed: spec.seed, series: run.series, summary, episodes, thresholds })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_follow_the_schedule() {
        let spec = ScenarioSpec::new(1, 42);
        assert_eq!(arrival_rate_at(&spec, 1, 30.0).unwrap(), 90.0);
        assert_eq!(arrival_rate_at(&spec, 2, 230.0).unwrap(), 90.0);
        assert!((arrival_rate_at(&spec, 0, 30.0).unwrap() - 1.3 * 90.0).abs() < 1e-12);
        assert!((arrival_rate_at(&spec, 0, 200.0).unwrap() - 2.0 * 90.0).abs() < 1e-12);
        assert!(matches!(arrival_rate_at(&spec, 0, 241.0), Err(ScenarioError::TimeOutOfRange { .. })));
        assert!(arrival_rate_at(&spec, 0, -0.5).is_err());
    }

    #[test]
    fn phase_boundaries_are_right_continuous() {
        let spec = ScenarioSpec::new(1, 42);
        let at = |t: f64| arrival_rate_at(&spec, 0, t).unwrap() / 90.0;
        assert!((at(60.0) - 1.5).abs() < 1e-12);
        assert!((at(60.0 - 1e-6) - 1.3).abs() < 1e-12);
        assert!((at(600.0 * 0.1) - 1.5).abs() < 1e-12);
        assert!((at(1800.0 * 0.1) - 2.0).abs() < 1e-12);
        // end of the schedule: nominal again
        assert_eq!(at(240.0), 1.0);
    }

    #[test]
    fn lead_in_is_nominal() {
        let spec = ScenarioSpec { lead_in: 10.0, tail: 5.0, ..ScenarioSpec::new(3, 1) };
        assert_eq!(arrival_rate_at(&spec, 2, 9.9).unwrap(), 90.0);
        assert!((arrival_rate_at(&spec, 2, 10.0).unwrap() - 117.0).abs() < 1e-9);
        assert_eq!(arrival_rate_at(&spec, 2, 252.0).unwrap(), 90.0);
        assert_eq!(spec.phase_starts(), vec![10.0, 70.0, 130.0, 190.0]);
    }

    #[test]
    fn process_cycle_floor() {
        // 90 pkt/s for 112 s = 10080 packets
        let mut spec = ScenarioSpec::new(1, 1);
        spec.schedule = OverloadSchedule::uniform(&OverloadSchedule::DEFAULT_MULTIPLIERS, 28.0);
        assert!(spec.validate().is_ok());
        spec.schedule = OverloadSchedule::uniform(&OverloadSchedule::DEFAULT_MULTIPLIERS, 27.0);
        let err = spec.validate().unwrap_err();
        assert!(err.to_string().contains("process cycle too short"));
    }

    #[test]
    fn spec_violations_name_fields() {
        let mut spec = ScenarioSpec::new(2, 1);
        spec.overloaded_queues = vec![0, 5];
        spec.schedule = OverloadSchedule::uniform(&[1.5, 1.3], 60.0);
        spec.agent.epsilon = 1.5;
        let fields: Vec<_> = spec.violations().into_iter().map(|(f, _)| f).collect();
        assert!(fields.contains(&"agent.epsilon".to_string()));
        assert!(fields.contains(&"scenario.schedule".to_string()));
        assert!(fields.contains(&"scenario.overloaded_queues".to_string()));
    }

    #[test]
    fn short_run_shape() {
        let mut spec = ScenarioSpec::new(1, 3);
        spec.nominal_rate = 300.0;
        spec.gateway.link_capacity = 1000.0;
        spec.schedule = OverloadSchedule::uniform(&OverloadSchedule::DEFAULT_MULTIPLIERS, 10.0);
        let run = run_scenario(&spec).unwrap();
        assert_eq!(run.series.len(), 400);
        assert!(run.series.windows(2).all(|w| w[0].t < w[1].t));
        assert!((run.series.last().unwrap().t - 40.0).abs() < 1e-9);
        let active = run.series.iter().filter(|r| r.agent_active).count();
        assert_eq!(active, run.episodes.iter().map(|e| e.attempts).sum::<usize>());
        assert_eq!(run.summary.agent_invocations, run.episodes.len());
    }
}
