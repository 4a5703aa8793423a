//! `sliceq` command line: run one scenario, sweep seeds, validate configs
//! and slicing models.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigError, Overrides, RunConfig};
use crate::metrics::{aggregate, export_csv, export_json, RunSummary, SweepAggregate};
use crate::model::{build_gateway_plan, SliceModel};
use crate::scenario::{run_scenario, RunResult};

pub const EXIT_OK: u8 = 0;
pub const EXIT_RUN_FAILED: u8 = 1;
pub const EXIT_CONFIG_INVALID: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "sliceq", version, about = "Slicing gateway simulator with a SARSA rate controller")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write CSV + JSON outputs.
    Run(RunArgs),
    /// Run the same scenario for several seeds and aggregate the summaries.
    Sweep(SweepArgs),
    /// Check a configuration file without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Validate a slicing model document and print its gateway plans.
    Model {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Debug, Args, Default)]
pub struct OverrideArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<u32>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub phase_duration: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: OverrideArgs,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: OverrideArgs,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<u64>,
}

impl OverrideArgs {
    fn overrides(&self, seed: Option<u64>) -> Overrides {
        Overrides {
            scenario: self.scenario,
            seed,
            out_dir: self.out_dir.clone(),
            phase_duration: self.phase_duration,
            epsilon: self.epsilon,
            alpha: self.alpha,
            gamma: self.gamma,
        }
    }
}

/// Loads, overrides, resolves and validates. Errors are already reported.
fn prepare(config: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, u8> {
    let mut cfg = match config {
        Some(path) => RunConfig::load(path).map_err(report_config_error)?,
        None => RunConfig::default(),
    };
    cfg.apply(overrides);
    cfg.resolve_model().map_err(report_config_error)?;
    cfg.validate().map_err(report_config_error)?;
    Ok(cfg)
}

fn report_config_error(e: ConfigError) -> u8 {
    eprintln!("error: {e}");
    EXIT_CONFIG_INVALID
}

pub fn format_summary(result: &RunResult) -> String {
    let s = &result.summary;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "scenario {} seed {}: {} steps, overloaded queues {:?}",
        result.spec.id,
        result.seed,
        result.series.len(),
        result.spec.overloaded_queues
    );
    for q in &s.queues {
        let delay = q.measured.delay.map_or("n/a".to_string(), |d| format!("{d:.3} s"));
        let _ = writeln!(
            out,
            "  q{}: AT {:.3}  drops {}  throughput {:.2} pkt/s  loss {:.4}  delay {}",
            q.queue, q.at_fraction, q.total_drops, q.measured.bandwidth, q.measured.loss, delay
        );
    }
    let conv = s.convergence_rate.map_or("n/a".to_string(), |c| format!("{c:.3}"));
    let _ = writeln!(
        out,
        "  agent: {} invocations, {:.1} attempts/invocation, convergence {}",
        s.agent_invocations, s.mean_attempts, conv
    );
    out
}

fn write_outputs(
    dir: &Path,
    stem: &str,
    result: &RunResult,
    config: &RunConfig,
) -> std::io::Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{stem}.csv"));
    let json = dir.join(format!("{stem}.json"));
    std::fs::write(&csv, export_csv(&result.series))?;
    std::fs::write(&json, export_json(&result.series, &result.summary, config))?;
    Ok((csv, json))
}

pub fn cmd_run(args: &RunArgs) -> u8 {
    let cfg = match prepare(args.common.config.as_deref(), &args.common.overrides(args.seed)) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let result = match run_scenario(&cfg.scenario_spec()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUN_FAILED;
        }
    };
    let stem = format!("scenario{}_seed{}", cfg.scenario.id, cfg.seed);
    match write_outputs(&cfg.out_dir(), &stem, &result, &cfg) {
        Ok((csv, json)) => {
            print!("{}", format_summary(&result));
            println!("wrote {} and {}", csv.display(), json.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: writing outputs: {e}");
            EXIT_RUN_FAILED
        }
    }
}

#[derive(Serialize)]
struct SweepDocument<'a> {
    scenario: u32,
    seeds: &'a [u64],
    failed_seeds: Vec<u64>,
    aggregate: SweepAggregate,
}

pub fn cmd_sweep(args: &SweepArgs) -> u8 {
    let base = match prepare(args.common.config.as_deref(), &args.common.overrides(None)) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let dir = base.out_dir();
    let outcomes: Vec<Result<RunSummary, String>> = args
        .seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let mut cfg = base.clone();
            cfg.seed = seed;
            let result = run_scenario(&cfg.scenario_spec()).map_err(|e| format!("seed {seed}: {e}"))?;
            let stem = format!("sweep{i:03}_scenario{}_seed{seed}", cfg.scenario.id);
            write_outputs(&dir, &stem, &result, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
            Ok(result.summary)
        })
        .collect();

    let mut summaries = Vec::new();
    let mut failed = Vec::new();
    for (seed, outcome) in args.seeds.iter().zip(outcomes) {
        match outcome {
            Ok(s) => summaries.push(s),
            Err(e) => {
                eprintln!("error: {e}");
                failed.push(*seed);
            }
        }
    }
    let agg = aggregate(&summaries);
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "sweep over {} seeds ({} failed)", args.seeds.len(), failed.len());
    for q in &agg.queues {
        let _ = writeln!(
            stdout,
            "  q{}: AT {:.3} ± {:.3}  drops {:.1} ± {:.1}",
            q.queue, q.at_fraction.mean, q.at_fraction.stddev, q.total_drops.mean, q.total_drops.stddev
        );
    }
    let _ = writeln!(
        stdout,
        "  convergence {:.3} ± {:.3} over {} runs",
        agg.convergence_rate.mean, agg.convergence_rate.stddev, agg.convergence_rate.n
    );
    let doc =
        SweepDocument { scenario: base.scenario.id, seeds: &args.seeds, failed_seeds: failed.clone(), aggregate: agg };
    let path = dir.join(format!("sweep_scenario{}_aggregate.json", base.scenario.id));
    let written = std::fs::create_dir_all(&dir).and_then(|_| {
        let mut bytes = serde_json::to_vec_pretty(&doc).expect("aggregate serializes");
        bytes.push(b'\n');
        std::fs::write(&path, bytes)
    });
    if let Err(e) = written {
        eprintln!("error: writing {}: {e}", path.display());
        return EXIT_RUN_FAILED;
    }
    let _ = writeln!(stdout, "wrote {}", path.display());
    if failed.is_empty() {
        EXIT_OK
    } else {
        EXIT_RUN_FAILED
    }
}

pub fn cmd_validate(config: &Path) -> u8 {
    match prepare(Some(config), &Overrides::default()) {
        Ok(_) => {
            println!("{}: ok", config.display());
            EXIT_OK
        }
        Err(code) => code,
    }
}

pub fn cmd_model(path: &Path) -> u8 {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return EXIT_CONFIG_INVALID;
        }
    };
    let model = match SliceModel::from_json(&text) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG_INVALID;
        }
    };
    let report = model.validate();
    if !report.is_valid() {
        for v in &report.violations {
            eprintln!("violation: {v}");
        }
        return EXIT_CONFIG_INVALID;
    }
    for d in &model.domains {
        match build_gateway_plan(d) {
            Ok(plan) => {
                let classes: Vec<_> = plan.entries.iter().map(|e| e.constraint_class).collect();
                println!("{}: {} queues for classes {:?}", d.id, plan.queue_count(), classes);
            }
            Err(e) => println!("{}: {e}", d.id),
        }
    }
    EXIT_OK
}

pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG_INVALID } else { EXIT_OK });
        }
    };
    let code = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Validate { config } => cmd_validate(config),
        Command::Model { model } => cmd_model(model),
    };
    ExitCode::from(code)
}
