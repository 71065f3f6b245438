//! Batch front-end: parse a scenario config, run the requested checks,
//! emit a machine-readable report and plot-ready CSV files.
//!
//! Exit codes: 0 = all strict checks passed, 1 = a check failed,
//! 2 = numerical abort, 3 = configuration error.

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "nullot",
    about = "Optimal transport and energy conditions on null hypersurfaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the checks of one scenario configuration file.
    Check {
        /// Path to the scenario JSON (one scenario per file).
        config: PathBuf,
        /// Output directory for report.json and CSV artifacts.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the config's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (falls back to NULLOT_THREADS, then all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Multiply all tolerances by this factor.
        #[arg(long, default_value_t = 1.0)]
        tolerance_scale: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Check {
            config,
            out,
            seed,
            threads,
            tolerance_scale,
        } => run_check(config, out, seed, threads, tolerance_scale),
    }
}

fn run_check(
    config_path: PathBuf,
    out: PathBuf,
    seed: Option<u64>,
    threads: Option<usize>,
    tolerance_scale: f64,
) -> ExitCode {
    let threads = threads.or_else(|| {
        std::env::var("NULLOT_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(k) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
        {
            eprintln!("warning: thread pool already initialized: {e}");
        }
    }

    let text = match std::fs::read_to_string(&config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", config_path.display());
            return ExitCode::from(3);
        }
    };
    let config = match config::parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    let seed = seed.unwrap_or(config.seed);

    let start = Instant::now();
    let outcome = runner::run(&config, seed, tolerance_scale);
    let elapsed = start.elapsed();

    if let Err(e) = runner::validate_report(&outcome.report) {
        // only structurally valid reports may be emitted
        if outcome.exit_status == 0 || outcome.exit_status == 1 {
            eprintln!("error: emitted report failed schema validation: {e}");
            return ExitCode::from(2);
        }
    }
    match runner::write_outputs(&outcome, &out) {
        Ok(path) => {
            eprintln!(
                "wrote {} ({} artifacts) in {:.3} s; exit status {}",
                path.display(),
                outcome.artifacts.len(),
                elapsed.as_secs_f64(),
                outcome.exit_status
            );
        }
        Err(e) => {
            eprintln!("error: cannot write outputs: {e}");
            return ExitCode::from(2);
        }
    }
    ExitCode::from(outcome.exit_status as u8)
}
