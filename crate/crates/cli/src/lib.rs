//! Command-line harness: scenario files, sweeps, optimization runs, Monte
//! Carlo validation and CSV data for tables and figures.

pub mod error;
pub mod plotdata;
pub mod recipes;
pub mod run;
pub mod scenario;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::{CliError, Result};
pub use plotdata::{emit_plotdata, PlotKind, PlotSource};
pub use run::{run_fsmc, run_scenario, FsmcRequest, Outcome, RunOptions};
pub use scenario::Scenario;

#[derive(Debug, Parser)]
#[command(
    name = "nharq",
    version,
    about = "Non-orthogonal HARQ analysis, optimization and simulation"
)]
pub struct Cli {
    /// Seed for Monte Carlo runs; overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario file or a built-in recipe.
    Run {
        #[arg(required_unless_present = "recipe", conflicts_with = "recipe")]
        scenario: Option<PathBuf>,
        #[arg(long)]
        recipe: Option<String>,
    },
    /// Run a sweep scenario.
    Sweep { scenario: PathBuf },
    /// Run an optimization scenario.
    Optimize { scenario: PathBuf },
    /// Run a Monte Carlo scenario.
    Simulate { scenario: PathBuf },
    /// Run a Monte Carlo scenario and compare it with the analytic model.
    Validate { scenario: PathBuf },
    /// Build and inspect a finite-state fading channel.
    Fsmc(FsmcArgs),
    /// Print a built-in scenario as JSON.
    Recipe { name: String },
}

#[derive(Debug, Args)]
pub struct FsmcArgs {
    /// Normalized Doppler f_D t_TB.
    #[arg(long)]
    pub doppler_block: f64,
    /// Average SNR in dB.
    #[arg(long, allow_hyphen_values = true)]
    pub snr_db: f64,
    #[arg(long, default_value_t = 100)]
    pub blocklength: u32,
    #[arg(long, conflicts_with = "partition_parameter")]
    pub states: Option<usize>,
    /// Average state duration in blocks; picks the state count.
    #[arg(long)]
    pub partition_parameter: Option<f64>,
}

/// What a command produced: run artifacts or text for stdout.
#[derive(Debug)]
pub enum Report {
    Run(Outcome),
    Text(String),
}

fn recipe_or_err(name: &str) -> Result<Scenario> {
    recipes::recipe(name).ok_or_else(|| {
        CliError::Scenario(format!(
            "unknown recipe {name}; known: {}",
            recipes::NAMES.join(", ")
        ))
    })
}

/// Executes a parsed command line; `argv` is echoed into the manifest.
pub fn execute(cli: &Cli, argv: &[String]) -> Result<Report> {
    let opts = RunOptions {
        seed: cli.seed,
        threads: cli.threads,
        out_dir: cli.out_dir.clone(),
    };
    let (path, expected) = match &cli.command {
        Command::Recipe { name } => {
            return Ok(Report::Text(serde_json::to_string_pretty(&recipe_or_err(
                name,
            )?)?));
        }
        Command::Fsmc(a) => {
            let request = FsmcRequest {
                doppler_block: a.doppler_block,
                snr_db: a.snr_db,
                blocklength: a.blocklength,
                states: a.states,
                partition_parameter: a.partition_parameter,
            };
            return Ok(Report::Run(run_fsmc(&request, &opts, argv)?));
        }
        Command::Run {
            recipe: Some(name), ..
        } => {
            return Ok(Report::Run(run_scenario(
                &recipe_or_err(name)?,
                None,
                &opts,
                argv,
            )?));
        }
        Command::Run { scenario, .. } => (scenario.clone().expect("required by clap"), None),
        Command::Sweep { scenario } => (scenario.clone(), Some("sweep")),
        Command::Optimize { scenario } => (scenario.clone(), Some("optimize")),
        Command::Simulate { scenario } => (scenario.clone(), Some("simulate")),
        Command::Validate { scenario } => (scenario.clone(), Some("validate")),
    };
    let scenario = Scenario::load(&path)?;
    if let Some(kind) = expected {
        if scenario.experiment.kind() != kind {
            return Err(CliError::Scenario(format!(
                "{} holds a {} experiment, not {kind}",
                path.display(),
                scenario.experiment.kind()
            )));
        }
    }
    Ok(Report::Run(run_scenario(
        &scenario,
        path.parent(),
        &opts,
        argv,
    )?))
}
