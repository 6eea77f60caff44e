//! Command-line driver: loads scenario files, runs the mechanisms and
//! writes trace tables plus a JSON summary.
//!
//! Exit codes: `0` success, `2` parse or validation failure, `3` runtime
//! error.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod report;
pub mod scenario;

pub use report::Artifacts;
pub use scenario::{load_scenario, parse_scenario, write_scenario, RuleName, Scenario};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Parse(String),
    Validation(String),
    Runtime(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Validation(_) => 2,
            CliError::Runtime(_) | CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Parse(m) => write!(f, "parse error: {m}"),
            CliError::Validation(m) => write!(f, "invalid scenario: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

fn real(text: &str) -> Result<f64, String> {
    scenario::parse_number(text)
}

#[derive(Debug, Parser)]
#[command(name = "faithful", version, about = "Simulate and audit incentive-compatible distributed mechanisms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dual decomposition without taxes.
    RunDd(RunArgs),
    /// Dual decomposition with taxes (pivot rule unless overridden).
    RunVcg(RunArgs),
    /// Average consensus on a tree.
    RunConsensus(RunArgs),
    /// Pivot taxes from integrated marginal prices.
    IntegratePrice(RunArgs),
    /// Deviation gains over the scenario's deviation library.
    Audit(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::RunDd(_) => "run-dd",
            Command::RunVcg(_) => "run-vcg",
            Command::RunConsensus(_) => "run-consensus",
            Command::IntegratePrice(_) => "integrate-price",
            Command::Audit(_) => "audit",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::RunDd(a)
            | Command::RunVcg(a)
            | Command::RunConsensus(a)
            | Command::IntegratePrice(a)
            | Command::Audit(a) => a,
        }
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// Scenario file.
    pub scenario: PathBuf,
    /// Iteration horizon; repeat for several.
    #[arg(long = "n")]
    pub n: Vec<usize>,
    /// Dual step size.
    #[arg(long, value_parser = real)]
    pub gamma: Option<f64>,
    /// Consensus step size.
    #[arg(long, value_parser = real)]
    pub alpha: Option<f64>,
    /// Partition size for price integration.
    #[arg(long = "k-partition")]
    pub k_partition: Option<usize>,
    /// Tax rule.
    #[arg(long, value_enum)]
    pub mechanism: Option<RuleName>,
    /// Directory for trace tables and the summary.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Seed for generated scenarios.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Runs a parsed command and returns its artifacts without writing them.
pub fn execute(command: &Command) -> Result<Artifacts, CliError> {
    let go = || commands::dispatch(command);
    match command.args().threads {
        Some(0) => Err(CliError::Validation("--threads must be positive".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .install(go),
        None => go(),
    }
}

/// Full program: parse arguments, run, print the summary, write artifacts.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = execute(&cli.command).and_then(|a| {
        if let Some(dir) = &cli.command.args().out {
            a.write(dir)?;
        }
        Ok(a)
    });
    match result {
        Ok(a) => {
            print!("{}", a.summary_text());
            0
        }
        Err(e) => {
            eprintln!("faithful: {e}");
            e.exit_code()
        }
    }
}
