//! Python bindings: the gateway, the Q-table and agent primitives, whole
//! scenario runs and model validation.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sliceq_core::agent::{self, Action, AdjustBase, GlobalState};
use sliceq_core::gateway::{self, GatewaySizing, QueueLabel};
use sliceq_core::metrics::{export_csv, export_json};
use sliceq_core::model::{build_gateway_plan, SliceModel};
use sliceq_core::{RunConfig, ScenarioSpec};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Hands a serializable value to Python through the stdlib json module.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_error)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_base(base: &str) -> PyResult<AdjustBase> {
    match base {
        "current_rate" => Ok(AdjustBase::CurrentRate),
        "link_capacity" => Ok(AdjustBase::LinkCapacity),
        other => Err(value_error(format!("unknown adjust base `{other}`"))),
    }
}

fn labels_from(flags: &[bool]) -> GlobalState {
    GlobalState {
        labels: flags
            .iter()
            .map(|&above| if above { QueueLabel::AboveThreshold } else { QueueLabel::BelowThreshold })
            .collect(),
    }
}

#[pyclass(module = "sliceq")]
struct Gateway {
    inner: gateway::Gateway,
    rng: ChaCha8Rng,
    dt: f64,
}

#[pymethods]
impl Gateway {
    #[new]
    #[pyo3(signature = (queue_count=3, capacity=1000, threshold_fraction=0.5, link_capacity=300.0, min_rate_fraction=0.01, dt=0.1, seed=0))]
    fn new(
        queue_count: usize,
        capacity: u64,
        threshold_fraction: f64,
        link_capacity: f64,
        min_rate_fraction: f64,
        dt: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let sizing = GatewaySizing { queue_count, capacity, threshold_fraction, link_capacity, min_rate_fraction, dt };
        let inner = gateway::Gateway::new(&sizing).map_err(value_error)?;
        Ok(Self { inner, rng: ChaCha8Rng::seed_from_u64(seed), dt })
    }

    #[getter]
    fn flush_rates(&self) -> Vec<f64> {
        self.inner.flush_rates()
    }

    #[getter]
    fn occupancies(&self) -> Vec<u64> {
        self.inner.occupancies()
    }

    #[getter]
    fn thresholds(&self) -> Vec<u64> {
        self.inner.thresholds()
    }

    #[getter]
    fn clock(&self) -> f64 {
        self.inner.clock
    }

    /// True per queue when above threshold.
    fn labels(&self) -> Vec<bool> {
        self.inner.labels().iter().map(|l| l.is_above()).collect()
    }

    fn set_flush_rates(&mut self, rates: Vec<f64>) -> PyResult<()> {
        self.inner.set_flush_rates(&rates).map_err(value_error)
    }

    /// Applies action `action` (canonical index) and returns the new rates.
    #[pyo3(signature = (action, fraction=0.1, base="link_capacity"))]
    fn apply_action(&mut self, action: usize, fraction: f64, base: &str) -> PyResult<Vec<f64>> {
        if action >= Action::count(self.inner.len()) {
            return Err(value_error(format!("action index {action} out of range")));
        }
        let rates = agent::apply_action(&self.inner, Action::from_index(action), fraction, parse_base(base)?);
        self.inner.set_flush_rates(&rates).map_err(value_error)?;
        Ok(rates)
    }

    /// Advances one step and returns the step report as a dict.
    #[pyo3(signature = (arrival_rates, dt=None))]
    fn step<'py>(&mut self, py: Python<'py>, arrival_rates: Vec<f64>, dt: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
        if arrival_rates.len() != self.inner.len() || arrival_rates.iter().any(|r| r.is_nan() || *r < 0.0) {
            return Err(value_error("need one non-negative arrival rate per queue"));
        }
        let report = self.inner.step(dt.unwrap_or(self.dt), &arrival_rates, &mut self.rng);
        to_py(py, &report)
    }

    fn __repr__(&self) -> String {
        format!(
            "Gateway(queues={}, rates={:?}, occupancy={:?})",
            self.inner.len(),
            self.inner.flush_rates(),
            self.inner.occupancies()
        )
    }
}

#[pyclass(module = "sliceq")]
struct QTable {
    inner: agent::QTable,
}

#[pymethods]
impl QTable {
    #[new]
    fn new(queues: usize) -> Self {
        Self { inner: agent::QTable::new(queues) }
    }

    #[getter]
    fn states(&self) -> usize {
        self.inner.states()
    }

    #[getter]
    fn actions(&self) -> usize {
        self.inner.actions()
    }

    fn get(&self, state: usize, action: usize) -> PyResult<f64> {
        self.check(state, action)?;
        Ok(self.inner.get(state, action))
    }

    fn set(&mut self, state: usize, action: usize, value: f64) -> PyResult<()> {
        self.check(state, action)?;
        self.inner.set(state, action, value);
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn update(
        &mut self,
        state: usize,
        action: usize,
        reward: f64,
        next_state: usize,
        next_action: usize,
        alpha: f64,
        gamma: f64,
    ) -> PyResult<f64> {
        self.check(state, action)?;
        self.check(next_state, next_action)?;
        agent::sarsa_update(&mut self.inner, state, action, reward, next_state, next_action, alpha, gamma);
        Ok(self.inner.get(state, action))
    }

    fn greedy(&self, state: usize) -> PyResult<usize> {
        self.check(state, 0)?;
        let s = GlobalState::from_index(self.inner.queues(), state);
        Ok(agent::greedy_action(&self.inner, &s).index())
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.inner.states()).map(|s| self.inner.row(s).to_vec()).collect()
    }
}

impl QTable {
    fn check(&self, state: usize, action: usize) -> PyResult<()> {
        if state >= self.inner.states() || action >= self.inner.actions() {
            return Err(value_error(format!("({state}, {action}) outside the table")));
        }
        Ok(())
    }
}

/// Rates after one action; see the core crate for the donation rules.
#[pyfunction]
fn redistribute(rates: Vec<f64>, link_capacity: f64, min_rate: f64, action: usize, amount: f64) -> PyResult<Vec<f64>> {
    if action >= Action::count(rates.len()) {
        return Err(value_error(format!("action index {action} out of range")));
    }
    Ok(agent::redistribute(&rates, link_capacity, min_rate, Action::from_index(action), amount))
}

/// Priority-weighted label score of a state given as above-threshold flags.
#[pyfunction]
fn reward(above: Vec<bool>, weights: Vec<f64>) -> PyResult<f64> {
    if above.len() != weights.len() {
        return Err(value_error("one weight per queue"));
    }
    Ok(agent::reward(&labels_from(&above), &weights))
}

#[pyfunction]
fn state_index(above: Vec<bool>) -> usize {
    labels_from(&above).index()
}

/// Runs a scenario. `config` is optional TOML text; explicit arguments win.
#[pyfunction]
#[pyo3(signature = (scenario=None, seed=None, config=None, series=true))]
fn run_scenario<'py>(
    py: Python<'py>,
    scenario: Option<u32>,
    seed: Option<u64>,
    config: Option<&str>,
    series: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = match config {
        Some(text) => RunConfig::from_toml(text, std::path::Path::new("<python>")).map_err(value_error)?,
        None => RunConfig::default(),
    };
    cfg.apply(&sliceq_core::config::Overrides { scenario, seed, ..Default::default() });
    cfg.validate().map_err(value_error)?;
    let spec: ScenarioSpec = cfg.scenario_spec();
    let result = py.detach(|| sliceq_core::run_scenario(&spec)).map_err(value_error)?;

    let out = pyo3::types::PyDict::new(py);
    out.set_item("summary", to_py(py, &result.summary)?)?;
    out.set_item("episodes", to_py(py, &result.episodes)?)?;
    out.set_item("thresholds", result.thresholds.clone())?;
    if series {
        out.set_item("series", to_py(py, &result.series)?)?;
    }
    out.set_item("csv", String::from_utf8(export_csv(&result.series)).map_err(value_error)?)?;
    out.set_item("json", String::from_utf8(export_json(&result.series, &result.summary, &cfg)).map_err(value_error)?)?;
    Ok(out.into_any())
}

/// Violation messages for a model document; empty when valid.
#[pyfunction]
fn validate_model(document: &str) -> PyResult<Vec<String>> {
    let model = SliceModel::from_json(document).map_err(value_error)?;
    Ok(model.validate().violations.iter().map(ToString::to_string).collect())
}

/// (constraint class, queue) pairs for one domain of a model document.
#[pyfunction]
fn gateway_plan(document: &str, domain: &str) -> PyResult<Vec<(u32, usize)>> {
    let model = SliceModel::from_json(document).map_err(value_error)?;
    let d = model.domain(domain).ok_or_else(|| value_error(format!("no domain `{domain}`")))?;
    let plan = build_gateway_plan(d).map_err(value_error)?;
    Ok(plan.entries.iter().map(|e| (e.constraint_class, e.queue)).collect())
}

#[pymodule]
fn sliceq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Gateway>()?;
    m.add_class::<QTable>()?;
    m.add_function(wrap_pyfunction!(redistribute, m)?)?;
    m.add_function(wrap_pyfunction!(reward, m)?)?;
    m.add_function(wrap_pyfunction!(state_index, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(validate_model, m)?)?;
    m.add_function(wrap_pyfunction!(gateway_plan, m)?)?;
    Ok(())
}
