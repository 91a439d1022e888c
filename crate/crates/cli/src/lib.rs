//! Command line front end: read an experiment file, run the requested
//! study against the core crate, and map the result to an exit code.
//!
//! Exit codes: 0 pass, 2 property violation beyond tolerance, 3 scaffold
//! or solver failure at run time, 64 config problem (with one diagnostic
//! per line, nothing written).

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

const EXIT_VIOLATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_CONFIG: u8 = 64;

#[derive(Parser)]
#[command(
    name = "minsup",
    version,
    about = "Minimal supersolution studies on finite Brownian scaffolds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment a config file describes.
    Run(RunArgs),
    /// Report config problems without running anything.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment file.
    config: PathBuf,
    /// Override the [run] output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the [run] seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the [run] pass tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Experiment file.
    config: PathBuf,
}

pub fn run(args: impl IntoIterator<Item = OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_CONFIG,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run(args) => run_experiment(&args),
        Command::Validate(args) => validate(&args),
    }
}

fn run_experiment(args: &RunArgs) -> ExitCode {
    let mut exp = match config::load(&args.config) {
        Ok(exp) => exp,
        Err(diags) => return report_config_errors(&diags),
    };
    if let Some(out) = &args.out {
        exp.out = out.clone();
    }
    if let Some(seed) = args.seed {
        exp.seed = seed;
    }
    if let Some(tol) = args.tolerance {
        if !(tol > 0.0 && tol.is_finite()) {
            let diag = "config: --tolerance must be positive and finite".to_string();
            return report_config_errors(std::slice::from_ref(&diag));
        }
        exp.tolerance = tol;
    }
    match commands::execute(&exp) {
        Ok(commands::Outcome::Pass) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Violation) => ExitCode::from(EXIT_VIOLATION),
        Err(message) => {
            eprintln!("{message}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn validate(args: &ValidateArgs) -> ExitCode {
    match config::load(&args.config) {
        Ok(exp) => {
            println!(
                "ok: {} on a dim {} steps {} scaffold",
                exp.command.name(),
                exp.dim,
                exp.steps
            );
            ExitCode::SUCCESS
        }
        Err(diags) => report_config_errors(&diags),
    }
}

fn report_config_errors(diags: &[String]) -> ExitCode {
    for d in diags {
        eprintln!("{d}");
    }
    ExitCode::from(EXIT_CONFIG)
}
