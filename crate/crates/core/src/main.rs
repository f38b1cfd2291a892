use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use staggered_euler::cli::{parse_config, riemann_table, run_case, write_outputs};
use staggered_euler::Error;

#[derive(Parser)]
#[command(version, about = "Staggered solver for the 1D Euler equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the case described by a TOML config.
    Run {
        config: PathBuf,
        /// Output directory; overrides `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Drop the corrective source from the internal energy balance.
        #[arg(long)]
        no_correction: bool,
    },
    /// Print the exact solution of a preset at its end time as CSV.
    Riemann {
        preset: String,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 1,
        Error::Config(_) | Error::Precondition(_) | Error::Vacuum { .. } | Error::Domain(_) => 2,
        _ => 3,
    }
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(&e))
}

fn run(config: PathBuf, out: Option<PathBuf>, no_correction: bool) -> ExitCode {
    let text = match std::fs::read_to_string(&config) {
        Ok(t) => t,
        Err(source) => return fail(Error::Io { path: config, source }),
    };
    let mut cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if no_correction {
        cfg.scheme.corrective_source = false;
    }
    if let Some(dir) = out {
        cfg.output.dir = dir;
    }
    let start = Instant::now();
    let report = match run_case(&cfg) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    if let Err(e) = write_outputs(&report, &cfg.output.dir) {
        return fail(e);
    }
    eprintln!(
        "{} steps to t = {}, L1 density error {:.6e}, {:.2?}",
        report.steps,
        report.final_state.time,
        report.l1_error,
        start.elapsed()
    );
    match report.failure {
        Some(msg) => {
            eprintln!("step failure: {msg}");
            ExitCode::from(3)
        }
        None => ExitCode::SUCCESS,
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, out, no_correction } => run(config, out, no_correction),
        Command::Riemann { preset, samples } => match riemann_table(&preset, samples) {
            Ok(t) => {
                print!("{t}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
    }
}
