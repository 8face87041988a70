use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ncki_cli::config::{parse_config, ConfigError, ExperimentConfig, ExperimentKind};
use ncki_cli::runner::{run, RunError, RunSummary};

#[derive(Parser)]
#[command(name = "ncki", version, about = "Numerical checks of noncommutative Khintchine inequalities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for the JSON report and CSV table.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Largest matrix size any operation may allocate.
    #[arg(long, global = true, env = "NCKI_DIM_CAP")]
    dim_cap: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one verification experiment.
    Verify {
        experiment: ExperimentKind,
        /// Family descriptor, e.g. `fock:d=2,m=3`, `rc:d=4`.
        #[arg(long)]
        family: Option<String>,
    },
    /// Matuszewska-Orlicz indices of Orlicz functions.
    Indices {
        /// Orlicz descriptor, e.g. `power:p=2` or `powerlog:p=2,a=1`; repeatable.
        #[arg(long)]
        phi: Vec<String>,
    },
    /// Parameter sweeps.
    Sweep {
        #[command(subcommand)]
        target: SweepTarget,
    },
}

#[derive(Subcommand)]
enum SweepTarget {
    /// L_inf Khintchine ratios for GUE families of growing size.
    Gue {
        /// Comma-separated matrix sizes N.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        /// Number of GUE matrices.
        #[arg(long)]
        d: Option<usize>,
    },
}

fn load(kind: ExperimentKind, common: &Common) -> Result<ExperimentConfig, ConfigError> {
    match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| ConfigError::Validation(format!("{}: {e}", path.display())))?;
            let config = parse_config(&text)?;
            if config.experiment != kind {
                return Err(ConfigError::Validation(format!(
                    "config describes {}, but {kind} was requested",
                    config.experiment
                )));
            }
            Ok(config)
        }
        None => Ok(ExperimentConfig::blank(kind)),
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    let common = &cli.common;
    let kind = match &cli.command {
        Command::Verify { experiment, .. } => *experiment,
        Command::Indices { .. } => ExperimentKind::OrliczIndices,
        Command::Sweep { target: SweepTarget::Gue { .. } } => ExperimentKind::GueSweep,
    };
    let mut config = load(kind, common)?;
    match &cli.command {
        Command::Verify { family: Some(f), .. } => config.family = Some(f.clone()),
        Command::Indices { phi } if !phi.is_empty() => config.phi = phi.clone(),
        Command::Sweep { target: SweepTarget::Gue { sizes, d } } => {
            if !sizes.is_empty() {
                config.sizes = sizes.clone();
            }
            if d.is_some() {
                config.coefficients.count = *d;
            }
        }
        _ => {}
    }
    if common.seed.is_some() {
        config.seed = common.seed;
    }
    if let Some(t) = common.tolerance {
        config.tolerance = t;
    }
    if let Some(t) = common.trials {
        config.trials = t;
    }
    if common.jobs.is_some() {
        config.jobs = common.jobs;
    }
    if common.out.is_some() {
        config.output.dir = common.out.clone();
    }
    config.finalize()
}

fn print_summary(summary: &RunSummary) {
    if summary.experiment == ExperimentKind::OrliczIndices.name() {
        for r in &summary.reports {
            println!("{}: p_phi = {:.6}, q_phi = {:.6}", r.family, r.lhs, r.rhs);
        }
    }
    println!(
        "{}: {} reports, {} violations, max ratio {:.6}, {:.2}s",
        summary.experiment,
        summary.reports.len(),
        summary.violations,
        summary.max_ratio,
        summary.wall_time
    );
}

fn execute(cli: &Cli) -> Result<u8, RunError> {
    if let Some(cap) = cli.common.dim_cap {
        ncki_core::matrix::set_dim_cap(cap);
    }
    let config = build_config(cli)?;
    let summary = run(&config)?;
    print_summary(&summary);
    if let Some(dir) = &config.output.dir {
        let (json, csv) = summary.write(&config, dir)?;
        println!("wrote {} and {}", json.display(), csv.display());
    }
    Ok(summary.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
