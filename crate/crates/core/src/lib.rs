//! Interdomain network-slicing gateway simulator with a tabular SARSA
//! controller that reallocates the shared link among per-class queues.
//!
//! - [`model`]: domains, resources, communication slices and gateway plans.
//! - [`gateway`]: the discrete-time queueing gateway.
//! - [`agent`]: the SARSA bandwidth controller.
//! - [`scenario`]: phased overload runs driving gateway and agent.
//! - [`metrics`]: time series, summaries, CSV/JSON export.
//! - [`config`] and [`cli`]: the `sliceq` command.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod cli;
pub mod config;
pub mod gateway;
pub mod metrics;
pub mod model;
pub mod scenario;

pub use agent::{Action, AgentConfig, GlobalState, QTable, SarsaAgent};
pub use config::RunConfig;
pub use gateway::{Gateway, GatewayQueue, GatewaySizing, QueueLabel, StepReport};
pub use metrics::{RunSummary, TimeSeriesRow};
pub use model::{SliceModel, SliceParams};
pub use scenario::{run_scenario, RunResult, ScenarioSpec};
