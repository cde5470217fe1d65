//! Command-line front end for gait simulation and walkability prediction.
//!
//! `simulate`, `predict`, `sweep` and `bench` share one scenario document;
//! see `docs/formats.md` at the repository root for the configuration schema and every output file.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::Context;
pub use config::{ModelSelector, ScenarioConfig};
pub use error::CliError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "GAITLAB_OUT";

#[derive(Debug, Parser)]
#[command(name = "gaitlab", version, about = "Kneed biped gait simulation and walkability prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the nonlinear model and write the trace and step descriptors.
    Simulate(CommonArgs),
    /// Determine walkability with the linearized predictor.
    Predict(CommonArgs),
    /// Sweep steady gait descriptors over beta for each kappa.
    Sweep(CommonArgs),
    /// Time the nonlinear simulation against the linearized predictor.
    Bench(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Scenario document (JSON); defaults to the reference scenario.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory [default: run.output_dir, then $GAITLAB_OUT, then ./gaitlab-out].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of steps, overriding run.steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Models to evaluate, overriding run.model.
    #[arg(long, value_enum)]
    pub model: Option<ModelSelector>,
    /// Worker threads for sweeps [default: all cores].
    #[arg(long)]
    pub workers: Option<usize>,
    /// Exit with status 3 when the scenario fails.
    #[arg(long)]
    pub strict: bool,
}

impl CommonArgs {
    pub fn context(&self) -> Result<Context, CliError> {
        let mut config = match &self.config {
            Some(path) => ScenarioConfig::load(path)?,
            None => ScenarioConfig::default(),
        };
        if let Some(n) = self.steps {
            config.run.steps = Some(n);
        }
        if let Some(m) = self.model {
            config.run.model = m;
        }
        let out = commands::resolve_out_dir(self.out.as_deref(), &config);
        Context::new(config, out, self.workers, self.strict)
    }
}

/// Runs a parsed command and returns a one-line JSON summary.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let summary = match &cli.command {
        Command::Simulate(a) => serde_json::to_string(&commands::simulate(&a.context()?)?)?,
        Command::Predict(a) => serde_json::to_string(&commands::predict(&a.context()?)?)?,
        Command::Sweep(a) => serde_json::to_string(&commands::sweep(&a.context()?)?)?,
        Command::Bench(a) => serde_json::to_string(&commands::bench(&a.context()?)?)?,
    };
    Ok(summary)
}
