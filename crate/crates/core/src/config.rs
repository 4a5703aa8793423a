//! Run configuration file (TOML) and command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentConfig;
use crate::gateway::GatewaySizing;
use crate::model::{build_gateway_plan, SliceModel};
use crate::scenario::{OverloadSchedule, ScenarioSpec, MIN_PACKETS_PER_QUEUE};

pub const OUT_DIR_ENV: &str = "SLICEQ_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{}`: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration:\n{}", .0.iter().map(|i| format!("  - {i}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ConfigIssue>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub id: u32,
    /// Defaults to queues `0..id`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overloaded_queues: Option<Vec<usize>>,
    pub nominal_rate: f64,
    pub phase_duration: f64,
    pub multipliers: Vec<f64>,
    pub lead_in: f64,
    pub tail: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            id: 1,
            overloaded_queues: None,
            nominal_rate: 90.0,
            phase_duration: 60.0,
            multipliers: OverloadSchedule::DEFAULT_MULTIPLIERS.to_vec(),
            lead_in: 0.0,
            tail: 0.0,
        }
    }
}

/// Derive the queue count from one domain of a slicing model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub path: PathBuf,
    pub domain: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub gateway: GatewaySizing,
    pub agent: AgentConfig,
    pub scenario: ScenarioSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            gateway: GatewaySizing::default(),
            agent: AgentConfig::default(),
            scenario: ScenarioSection::default(),
            model: None,
            output: OutputSection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scenario: Option<u32>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub phase_duration: Option<f64>,
    pub epsilon: Option<f64>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut config = Self::from_toml(&text, path)?;
        // model paths are relative to the config file
        if let Some(model) = &mut config.model {
            if model.path.is_relative() {
                if let Some(dir) = path.parent() {
                    model.path = dir.join(&model.path);
                }
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(id) = o.scenario {
            self.scenario.id = id;
            self.scenario.overloaded_queues = None;
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(dir) = &o.out_dir {
            self.output.dir = Some(dir.clone());
        }
        if let Some(t) = o.phase_duration {
            self.scenario.phase_duration = t;
        }
        if let Some(v) = o.epsilon {
            self.agent.epsilon = v;
        }
        if let Some(v) = o.alpha {
            self.agent.alpha = v;
        }
        if let Some(v) = o.gamma {
            self.agent.gamma = v;
        }
    }

    /// Reads the model section, if any, and sets the queue count from the
    /// domain's gateway plan.
    pub fn resolve_model(&mut self) -> Result<(), ConfigError> {
        let Some(section) = &self.model else {
            return Ok(());
        };
        let issue = |message: String| ConfigError::Invalid(vec![ConfigIssue { field: "model".into(), message }]);
        let text = std::fs::read_to_string(&section.path)
            .map_err(|source| ConfigError::Read { path: section.path.clone(), source })?;
        let model = SliceModel::from_json(&text).map_err(|e| issue(e.to_string()))?;
        let report = model.validate();
        if !report.is_valid() {
            let msgs: Vec<_> = report.violations.iter().map(ToString::to_string).collect();
            return Err(issue(msgs.join("; ")));
        }
        let domain =
            model.domain(&section.domain).ok_or_else(|| issue(format!("domain `{}` not in model", section.domain)))?;
        let plan = build_gateway_plan(domain).map_err(|e| issue(e.to_string()))?;
        self.gateway.queue_count = plan.queue_count();
        Ok(())
    }

    pub fn scenario_spec(&self) -> ScenarioSpec {
        ScenarioSpec {
            id: self.scenario.id,
            overloaded_queues: self
                .scenario
                .overloaded_queues
                .clone()
                .unwrap_or_else(|| ScenarioSpec::default_overloaded(self.scenario.id)),
            nominal_rate: self.scenario.nominal_rate,
            schedule: OverloadSchedule::uniform(&self.scenario.multipliers, self.scenario.phase_duration),
            lead_in: self.scenario.lead_in,
            tail: self.scenario.tail,
            gateway: self.gateway.clone(),
            agent: self.agent.clone(),
            seed: self.seed,
        }
    }

    /// Every violated invariant, each naming its field.
    pub fn issues(&self) -> Vec<ConfigIssue> {
        let spec = self.scenario_spec();
        let mut out: Vec<ConfigIssue> =
            spec.violations().into_iter().map(|(field, message)| ConfigIssue { field, message }).collect();
        if !(self.scenario.phase_duration > 0.0) {
            out.push(ConfigIssue {
                field: "scenario.phase_duration".into(),
                message: format!("{} must be positive", self.scenario.phase_duration),
            });
        }
        if out.is_empty() {
            if let Err(e) = spec.check_process_cycle() {
                out.push(ConfigIssue {
                    field: "scenario.phase_duration".into(),
                    message: format!("{e} (need >= {MIN_PACKETS_PER_QUEUE} expected packets per queue)"),
                });
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(issues))
        }
    }

    /// Flag or file value, then `SLICEQ_OUT_DIR`, then `./out`.
    pub fn out_dir(&self) -> PathBuf {
        self.output
            .dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::from_toml(text, Path::new("test.toml"))
    }

    #[test]
    fn defaults_are_valid() {
        let c = parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert!(c.validate().is_ok());
        assert_eq!(c.gateway.threshold_fraction, 0.5);
        assert_eq!(c.agent.max_attempts, 500);
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.scenario.overloaded_queues = Some(vec![2]);
        c.output.dir = Some("x".into());
        assert_eq!(parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn epsilon_out_of_range_is_named() {
        let c = parse("[agent]\nepsilon = 1.5\n").unwrap();
        let issues = c.issues();
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].field, "agent.epsilon");
    }

    #[test]
    fn negative_link_capacity() {
        let c = parse("[gateway]\nlink_capacity = -300.0\n").unwrap();
        assert!(c.issues().iter().any(|i| i.field == "gateway.link_capacity"));
    }

    #[test]
    fn unsorted_multipliers_name_schedule() {
        let c = parse("[scenario]\nmultipliers = [1.5, 1.3, 1.8, 2.0]\n").unwrap();
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("schedule"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(parse("[agent]\nepsilom = 0.1\n"), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn undersized_run_is_rejected() {
        let c = parse("[scenario]\nphase_duration = 10.0\n").unwrap();
        let issues = c.issues();
        assert_eq!(issues.len(), 1);
        assert!(issues[0].message.contains("process cycle too short"));
    }

    #[test]
    fn overrides_take_precedence() {
        let mut c = parse("seed = 1\n[scenario]\nid = 1\noverloaded_queues = [2]\n").unwrap();
        c.apply(&Overrides {
            scenario: Some(3),
            seed: Some(9),
            epsilon: Some(0.5),
            phase_duration: Some(30.0),
            ..Overrides::default()
        });
        let spec = c.scenario_spec();
        assert_eq!(spec.overloaded_queues, vec![0, 1, 2]);
        assert_eq!(spec.seed, 9);
        assert_eq!(spec.agent.epsilon, 0.5);
        assert_eq!(spec.schedule.total_duration(), 120.0);
    }
}
