use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sgsa_core::galerkin::ActivityMode;
use sgsa_core::Error;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "sgsa", version, about = "Optimal safe controller synthesis by safe Galerkin successive approximation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Problem configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for generated files.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Seed for sampled property suites.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Override the quadrature order from the config.
    #[arg(long, global = true)]
    pub quad_order: Option<usize>,
    /// Override the activity mode (`fixed` or `per-iteration`).
    #[arg(long, global = true)]
    pub activity_mode: Option<ActivityMode>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize the nominal and safe controllers and write controller files.
    Synth,
    /// Simulate a controller file from one initial condition.
    Simulate {
        /// Controller file written by `synth`.
        #[arg(long)]
        controller: PathBuf,
        /// Initial state, comma-separated. Defaults to the first `ic` in the config.
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<String>,
        /// Output CSV name inside the output directory.
        #[arg(long, default_value = "trajectory.csv")]
        output: String,
    },
    /// Cost table of unconstrained, safe optimal and min-norm controllers.
    Compare,
    /// Run the property suites on the synthesized controller.
    Verify,
    /// Phase-plane SVG from trajectory CSVs.
    Plot {
        /// Trajectory CSV files.
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Output SVG name inside the output directory.
        #[arg(long, default_value = "phase.svg")]
        output: String,
    },
    /// Cost at the first initial condition over quadrature orders and basis degrees.
    Quadstudy {
        #[arg(long, value_delimiter = ',', default_values_t = [4usize, 6, 8, 10])]
        orders: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [4u32, 6])]
        degrees: Vec<u32>,
    },
}

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn precondition(message: impl Into<String>) -> Self {
        Self { code: 4, message: message.into() }
    }

    pub fn invariant(message: impl Into<String>) -> Self {
        Self { code: 5, message: message.into() }
    }

    pub fn io(what: &std::path::Path, e: std::io::Error) -> Self {
        Self { code: 1, message: format!("{}: {e}", what.display()) }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. }
            | Error::Invalid(_)
            | Error::InvalidDomain(_)
            | Error::Dimension { .. }
            | Error::NotSpd
            | Error::NotStabilizable => 2,
            Error::DegenerateHocbf { .. }
            | Error::InfeasibleFilter { .. }
            | Error::NotPsd { .. }
            | Error::StepUnderflow { .. }
            | Error::SingularSystem { .. }
            | Error::Diverged { .. }
            | Error::NonFinite(_) => 3,
        };
        Self { code, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth => commands::synth(&cli.common),
        Command::Simulate { controller, x0, output } => commands::simulate(&cli.common, &controller, x0.as_deref(), &output),
        Command::Compare => commands::compare(&cli.common),
        Command::Verify => commands::verify(&cli.common),
        Command::Plot { csv, output } => commands::plot(&cli.common, &csv, &output),
        Command::Quadstudy { orders, degrees } => commands::quadstudy(&cli.common, &orders, &degrees),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
