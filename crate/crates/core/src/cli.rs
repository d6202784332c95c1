//! Command-line front end: `run`, `sweep`, `report` and `validate`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, ExperimentConfig};
use crate::error::Result;
use crate::experiment::{report, run, run_sweep, write_run_artifacts, write_sweep_artifacts};

/// Exit status when a run completes but an acceptance check fails.
pub const EXIT_CHECKS_FAILED: i32 = 1;
/// Exit status for configuration, solver and I/O errors.
pub const EXIT_ERROR: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "gemeit", version, about = "GEM-write / EIT-read memory simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one configuration (sweep sections are ignored).
    Run(RunArgs),
    /// Run every point of the configuration's sweep and fit the metric.
    Sweep(RunArgs),
    /// Summarise a finished run or sweep directory.
    Report { dir: PathBuf },
    /// Parse and validate a configuration without running it.
    Validate { config: PathBuf },
}

#[derive(Args, Debug)]
pub struct RunArgs {
    pub config: PathBuf,
    /// Output directory (default from the config, else out/<name>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for detector noise and shot phases.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for sweep points (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Replaces the solver's relative tolerance.
    #[arg(long)]
    pub tolerance_override: Option<f64>,
}

fn prepare(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = load_config(&args.config)?;
    if let Some(tol) = args.tolerance_override {
        cfg = cfg.with_override("solver.rel_tolerance", tol)?;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn print_report(dir: &Path) -> Result<bool> {
    let (text, ok) = report(dir)?;
    print!("{text}");
    Ok(ok)
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let cfg = prepare(&args)?;
            let out = run(&cfg)?;
            write_run_artifacts(&out, &cfg, &cfg.output_dir)?;
            println!("artifacts in {}", cfg.output_dir.display());
            print_report(&cfg.output_dir)
        }
        Command::Sweep(args) => {
            let cfg = prepare(&args)?;
            let jobs = args.jobs.unwrap_or_else(rayon::current_num_threads);
            let (summary, _) = run_sweep(&cfg, jobs)?;
            write_sweep_artifacts(&summary, &cfg)?;
            println!("artifacts in {}", cfg.output_dir.display());
            print_report(&cfg.output_dir)
        }
        Command::Report { dir } => print_report(&dir),
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            println!("{}: valid", config.display());
            println!(
                "  name {}, mode {:?}, idealized {}",
                cfg.name, cfg.protocol.mode, cfg.protocol.idealized
            );
            println!(
                "  grid {} points over [{}, {}] mm, {} samples to {} us",
                cfg.grid.nz, cfg.grid.z_min, cfg.grid.z_max, cfg.grid.n_samples, cfg.grid.t_max
            );
            if let Some(s) = &cfg.sweep {
                println!(
                    "  sweep {} over {:?}, metric {}",
                    s.parameter,
                    s.values,
                    s.metric.name()
                );
            }
            Ok(true)
        }
    }
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn main_with(args: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { 0 };
        }
    };
    match execute(cli) {
        Ok(true) => 0,
        Ok(false) => EXIT_CHECKS_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
