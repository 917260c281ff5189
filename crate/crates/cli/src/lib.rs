//! Command-line front end: runs named verification scenarios and writes
//! their summaries and CSV tables.

pub mod config;
pub mod report;
pub mod scenarios;

use std::io::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{Scenario, Section};
use crate::report::Outcome;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("unknown scenario `{0}` (see `gexpect list`)")]
    UnknownScenario(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid configuration: {0}")]
    Core(#[from] gexpect::Error),
    #[error("output: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        2
    }
}

#[derive(Debug, Parser)]
#[command(name = "gexpect", version, about = "Numerical checks for one-dimensional G-expectation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one builtin scenario.
    Verify(VerifyArgs),
    /// Print the scenario catalog.
    List,
}

#[derive(Debug, Clone, Default, Args)]
pub struct VerifyArgs {
    pub scenario: String,
    /// Config file with `[scenario-name]` sections of `key = value` pairs.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Nodes per state axis.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub paths: Option<usize>,
    /// Comma-separated n values, e.g. `2,4,8`.
    #[arg(long, value_delimiter = ',')]
    pub n_schedule: Option<Vec<usize>>,
    /// Directory for the summary and CSV tables.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Builtin defaults, then the config section, then flags.
pub fn resolve(args: &VerifyArgs) -> Result<Scenario, CliError> {
    let entry = scenarios::find(&args.scenario).ok_or_else(|| CliError::UnknownScenario(args.scenario.clone()))?;
    let mut section = match &args.config {
        Some(path) => config::load_file(path)?.remove(&args.scenario).unwrap_or_default(),
        None => Section::default(),
    };
    section.overlay(Section {
        seed: args.seed,
        grid: args.grid,
        paths: args.paths,
        n_schedule: args.n_schedule.clone(),
        ..Section::default()
    });
    Scenario::resolve(entry.name, entry.defaults(), Some(section), entry.margin_fraction)
}

/// Resolves and runs a scenario inside a pool of `threads` workers.
pub fn run_scenario(args: &VerifyArgs) -> Result<(Scenario, Outcome), CliError> {
    let sc = resolve(args)?;
    let entry = scenarios::find(&sc.name).expect("resolved scenario exists");
    let outcome = match args.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?
            .install(|| entry.run(&sc))?,
        None => entry.run(&sc)?,
    };
    Ok((sc, outcome))
}

pub fn catalog_text() -> String {
    let width = scenarios::CATALOG.iter().map(|e| e.name.len()).max().unwrap_or(0);
    scenarios::CATALOG.iter().map(|e| format!("{:width$}  {}\n", e.name, e.about)).collect()
}

/// Runs the command and returns the process exit code: 0 when every
/// assertion passes, 1 when one fails, 2 for usage and configuration errors.
pub fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::List => {
            print!("{}", catalog_text());
            0
        }
        Command::Verify(args) => {
            let start = std::time::Instant::now();
            let result = run_scenario(&args).and_then(|(sc, outcome)| {
                if let Some(dir) = &args.out {
                    outcome.write(&sc, dir)?;
                }
                Ok((sc, outcome))
            });
            match result {
                Ok((sc, outcome)) => {
                    print!("{}", outcome.summary(&sc));
                    let _ = std::io::stdout().flush();
                    eprintln!("elapsed: {:.2} s", start.elapsed().as_secs_f64());
                    if outcome.passed() {
                        0
                    } else {
                        1
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            }
        }
    }
}
