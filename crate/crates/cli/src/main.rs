use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ulif_cli::{cmd_bound, cmd_compare, cmd_fit, cmd_simulate, exit_code, Grid};
use ulif_core::montecarlo::Execution;

/// Analytic uplink interference approximations for small-cell networks, with a Monte
/// Carlo reference.
#[derive(Parser)]
#[command(name = "ulif", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-cell KS error bounds as CSV.
    Bound {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-cell Gaussian fits and the aggregate power-lognormal fit as JSON, plus its CDF.
    Fit {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// dBm grid for the CDF table, lo:hi:step.
        #[arg(long, default_value = "-160:-40:0.5", allow_hyphen_values = true)]
        grid: Grid,
    },
    /// Monte Carlo interference samples.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Run on one thread. Results are identical either way.
        #[arg(long)]
        serial: bool,
        /// Also write the empirical CDF as CSV.
        #[arg(long)]
        ecdf: Option<PathBuf>,
    },
    /// KS distance between simulated samples and a fit, with a soundness verdict.
    Compare {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bound { scenario, out } => cmd_bound(&scenario, &out),
        Command::Fit { scenario, out, grid } => cmd_fit(&scenario, &out, grid),
        Command::Simulate { scenario, out, n, seed, serial, ecdf } => {
            let exec = if serial { Execution::Serial } else { Execution::Parallel };
            cmd_simulate(&scenario, n, seed, &out, exec, ecdf.as_deref())
        }
        Command::Compare { samples, fit, out } => cmd_compare(&samples, &fit, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
