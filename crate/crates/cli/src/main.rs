//! `rock`: generate data, train, evaluate, sweep and forecast with the
//! ROCK learners.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rock_core::{Error, Integrator, Result};

use commands::{ForecastArgs, InitialState, Outcome};
use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "rock", version, about = "Occupation kernel learners for ODEs and evolution PDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Recompute even if the outputs are up to date.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured system and write a dataset directory.
    Generate(#[command(flatten)] Common),
    /// Fit the configured model and write it to `model.bin`.
    Train(#[command(flatten)] Common),
    /// Score a model on held-out data.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Model file (default: `model.bin` in the output directory).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Test dataset directory (default: the config `test` section).
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Two-stage hyperparameter search; writes the best model.
    Sweep(#[command(flatten)] Common),
    /// Roll a saved model forward and write `forecast.csv`.
    Forecast {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated initial state for ODE models.
        #[arg(long, conflicts_with = "u0", required_unless_present = "u0", allow_hyphen_values = true)]
        x0: Option<String>,
        /// Field CSV whose first row is the initial profile, for PDE models.
        #[arg(long)]
        u0: Option<PathBuf>,
        #[arg(long)]
        horizon: f64,
        #[arg(long)]
        dt: f64,
        /// ODE integrator (default: the one stored with the model).
        #[arg(long, value_parser = parse_integrator)]
        integrator: Option<Integrator>,
    },
}

fn parse_integrator(s: &str) -> std::result::Result<Integrator, String> {
    match s {
        "euler" => Ok(Integrator::Euler),
        "rk4" => Ok(Integrator::Rk4),
        _ => Err(format!("unknown integrator {s:?} (euler or rk4)")),
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let path = c
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    ExperimentConfig::load(path)?.resolve(c.seed, c.output.clone())
}

fn report(outcome: Outcome, what: &str) {
    match outcome {
        Outcome::Done => eprintln!("{what}: done"),
        Outcome::UpToDate => eprintln!("{what}: up to date (use --force to recompute)"),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("ROCK_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("ROCK_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Generate(c) => report(commands::cmd_generate(&load_config(&c)?, c.force)?, "generate"),
        Command::Train(c) => report(commands::cmd_train(&load_config(&c)?, c.force)?, "train"),
        Command::Sweep(c) => report(commands::cmd_sweep(&load_config(&c)?, c.force)?, "sweep"),
        Command::Evaluate { common, model, test } => {
            let config = load_config(&common)?;
            let (outcome, rep) = commands::cmd_evaluate(&config, model.as_deref(), test.as_deref(), common.force)?;
            if let Some(r) = rep {
                print!("{}", r.to_table());
            }
            report(outcome, "evaluate");
        }
        Command::Forecast { common, model, x0, u0, horizon, dt, integrator } => {
            let output_dir = match (&common.output, &common.config) {
                (Some(o), _) => o.clone(),
                (None, Some(_)) => load_config(&common)?.output_dir().to_path_buf(),
                (None, None) => return Err(Error::Config("forecast needs --output or --config".into())),
            };
            let initial = match (x0, u0) {
                (Some(x), _) => InitialState::X0(commands::parse_state(&x)?),
                (None, Some(p)) => InitialState::U0(p),
                (None, None) => unreachable!("clap requires one of --x0 and --u0"),
            };
            let args = ForecastArgs { model, initial, horizon, dt, integrator, output_dir };
            report(commands::cmd_forecast(&args, common.force)?, "forecast");
        }
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: category=usage message={:?}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!("error: category={category} message={:?}", one_line(&e.to_string()));
            ExitCode::from(if category == "config" { 2 } else { 1 })
        }
    }
}
