//! `phonon-lab`: runs the verification experiments and writes their reports.

use clap::{Args, Parser, Subcommand};
use phonon_kinetics::runner::{run_experiment_with_outputs, Experiment, ExperimentConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "phonon-lab",
    version,
    about = "Verification lab for anomalous phonon diffusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; unspecified keys keep their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (defaults to the available parallelism).
    #[arg(long, global = true, value_name = "INT")]
    workers: Option<usize>,
    /// Reduced sample budgets for smoke runs.
    #[arg(long, global = true)]
    quick: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Kernel normalization, detailed balance and step-operator checks.
    ValidateKernel,
    /// Goodness of fit of the sampler and stationarity of the chain.
    ValidateSampler,
    /// Tail exponent of the flight length under the stationary law.
    Tail,
    /// Growth of the truncated variance against its prediction.
    Sigma2,
    /// Predictable quadratic variation of the truncated martingale.
    Qv,
    /// Gaussianity of the rescaled path and vanishing of the overshoot part.
    Clt,
    /// Continuous clock and its inverse.
    Clock,
    /// Decay of the kinetic semigroup near zero momentum.
    Semigroup,
    /// Weighted Poincaré constant over random fields.
    Poincare,
    /// Kinetic solution against the fractional diffusion limit.
    DiffusionLimit,
    /// Every experiment in sequence.
    All,
}

impl Command {
    fn experiment(self) -> Experiment {
        match self {
            Command::ValidateKernel => Experiment::ValidateKernel,
            Command::ValidateSampler => Experiment::ValidateSampler,
            Command::Tail => Experiment::Tail,
            Command::Sigma2 => Experiment::Sigma2,
            Command::Qv => Experiment::Qv,
            Command::Clt => Experiment::Clt,
            Command::Clock => Experiment::Clock,
            Command::Semigroup => Experiment::Semigroup,
            Command::Poincare => Experiment::Poincare,
            Command::DiffusionLimit => Experiment::DiffusionLimit,
            Command::All => Experiment::All,
        }
    }
}

fn build_config(cli: &Cli) -> phonon_kinetics::Result<ExperimentConfig> {
    let mut cfg = match &cli.common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if cli.common.quick {
        cfg = cfg.quick();
    }
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.common.out {
        cfg.output_dir = out.to_string_lossy().into_owned();
    }
    cfg.experiment = cli.command.experiment();
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("phonon-lab: {e}");
            return ExitCode::from(2);
        }
    };
    let workers = cli
        .common
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));

    let (manifest, outputs) = match run_experiment_with_outputs(&cfg, workers) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("phonon-lab: {e}");
            return ExitCode::from(2);
        }
    };
    for out in &outputs {
        println!("== {}", out.experiment);
        for r in &out.reports {
            println!("{}", r.describe());
        }
    }
    println!(
        "{} output files under {} ({:.1} s)",
        manifest.outputs.len(),
        cfg.output_dir,
        manifest.wall_clock_seconds
    );
    if manifest.passed {
        println!("all thresholds passed");
        ExitCode::SUCCESS
    } else {
        println!("{} threshold(s) failed:", manifest.failures.len());
        for f in &manifest.failures {
            println!("  {f}");
        }
        ExitCode::from(1)
    }
}
