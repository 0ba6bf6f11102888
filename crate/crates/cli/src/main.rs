use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mtsed_cli::commands::{self, RunConfig};
use mtsed_core::simulator::Method;

/// Distributed multi-time-slot economic dispatch engine.
#[derive(Parser)]
#[command(name = "mtsed", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one prediction window with the distributed dynamics.
    Solve(CommonArgs),
    /// Receding-horizon run: solve, apply the first slot, shift, repeat.
    Mpc(CommonArgs),
    /// Certify a previously written solution against its case.
    Verify(CommonArgs),
    /// Solve the window with the centralized reference method.
    Oracle(CommonArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Euler,
    Rk4,
}

#[derive(Args)]
struct CommonArgs {
    /// Case file (TOML).
    #[arg(long)]
    case: PathBuf,
    /// Override the horizon length from the case file.
    #[arg(long)]
    tau: Option<usize>,
    /// Override the slot duration (minutes).
    #[arg(long = "slot-minutes")]
    slot_minutes: Option<f64>,
    /// Integrator step in algorithm time.
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Stopping residual (solve/mpc), certification tolerance (verify/oracle).
    #[arg(long)]
    tol: Option<f64>,
    /// Wall-clock budget per window in seconds.
    #[arg(long = "max-seconds", default_value_t = 180)]
    max_seconds: u64,
    /// Integration method.
    #[arg(long, value_enum, default_value = "rk4")]
    method: MethodArg,
    /// Seed for the randomized initial state (omitted: box midpoints).
    #[arg(long)]
    seed: Option<u64>,
    /// Convergence trace CSV output path.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Summary document output path.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Number of receding-horizon windows (mpc).
    #[arg(long, default_value_t = 3)]
    windows: usize,
    /// Solution summary to certify (verify).
    #[arg(long)]
    solution: Option<PathBuf>,
}

impl CommonArgs {
    fn into_config(self) -> RunConfig {
        RunConfig {
            case: self.case,
            tau: self.tau,
            slot_minutes: self.slot_minutes,
            dt: self.dt,
            tol: self.tol,
            max_seconds: self.max_seconds,
            method: match self.method {
                MethodArg::Euler => Method::Euler,
                MethodArg::Rk4 => Method::Rk4,
            },
            seed: self.seed,
            trace: self.trace,
            summary: self.summary,
            windows: self.windows,
            solution: self.solution,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(args) => commands::solve(&args.into_config()),
        Command::Mpc(args) => commands::mpc(&args.into_config()),
        Command::Verify(args) => commands::verify(&args.into_config()),
        Command::Oracle(args) => commands::run_oracle(&args.into_config()),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
