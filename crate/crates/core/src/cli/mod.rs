//! Config-driven scenario runner behind the `qutrit-bsm` binary.

mod config;
mod scenarios;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::circuits::Via;

pub use config::{
    GrapeConfig, PhysicsConfig, Scenario, ScenarioConfig, SweepConfig, SweepParameter,
    TomographyConfig,
};
pub use scenarios::{run_scenario, RunReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_GOAL_NOT_MET: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("fidelity goal not met: {0}")]
    GoalNotMet(String),
    #[error("{0}")]
    Runtime(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::GoalNotMet(_) => EXIT_GOAL_NOT_MET,
            CliError::Runtime(_) | CliError::Io(_) => EXIT_FAILURE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qutrit-bsm", version, about = "Bell state measurement simulator for electron-nitrogen qutrits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte-Carlo measurement of all four Bell states.
    SimulateBsm(RunArgs),
    /// GRAPE synthesis of the gate stages; writes pulse files.
    OptimizePulse(RunArgs),
    /// Nine-setting tomography of a prepared state.
    Tomography(RunArgs),
    /// Measurement statistics across one readout parameter.
    Sweep(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "N")]
    pub trials: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "ideal|pulse")]
    pub mode: Option<Via>,
}

impl Command {
    fn split(self) -> (Scenario, RunArgs) {
        match self {
            Command::SimulateBsm(a) => (Scenario::SimulateBsm, a),
            Command::OptimizePulse(a) => (Scenario::OptimizePulse, a),
            Command::Tomography(a) => (Scenario::Tomography, a),
            Command::Sweep(a) => (Scenario::Sweep, a),
        }
    }
}

/// Reads the config file (if any) and layers the command-line flags on top.
pub fn resolve(scenario: Scenario, args: &RunArgs) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = cfg.scenario {
        if s != scenario {
            return Err(CliError::Config(format!(
                "config is for scenario {s}, but {scenario} was requested"
            )));
        }
    }
    cfg.scenario = Some(scenario);
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    cfg.validate()?;
    Ok(cfg.resolved())
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (scenario, args) = cli.command.split();
    let result = resolve(scenario, &args).and_then(|cfg| {
        let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        run_scenario(&cfg, &out)
    });
    match result {
        Ok(report) => {
            println!("{report}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("qutrit-bsm: {e}");
            e.exit_code()
        }
    }
}
