use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lsgp_cli::{CliError, ExperimentConfig, Task};

#[derive(Parser)]
#[command(name = "lsgp", version, about = "Experiments with locally stationary graph processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run whatever task the config names.
    Run(Common),
    /// Generate a synthetic dataset.
    Synth(Common),
    /// Learn a model from realizations.
    Learn(Common),
    /// Hide entries and interpolate them.
    Interpolate(Common),
    /// Partition the graph from the covariance.
    Partition(Common),
    /// Partition and fit a stationary model per part.
    LocalApprox(Common),
    /// Check the covariance bounds.
    VerifyBounds(Common),
    /// Repeat interpolation over a parameter grid.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    missing_ratio: Option<f64>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (task, common) = match cli.command {
        Command::Run(c) => (None, c),
        Command::Synth(c) => (Some(Task::Synth), c),
        Command::Learn(c) => (Some(Task::Learn), c),
        Command::Interpolate(c) => (Some(Task::Interpolate), c),
        Command::Partition(c) => (Some(Task::Partition), c),
        Command::LocalApprox(c) => (Some(Task::LocalApprox), c),
        Command::VerifyBounds(c) => (Some(Task::VerifyBounds), c),
        Command::Sweep(c) => (Some(Task::Sweep), c),
    };
    let mut cfg = ExperimentConfig::from_file(&common.config)?;
    if let Some(t) = task {
        cfg.task = t;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = common.output_dir {
        cfg.output_dir = d;
    }
    if let Some(k) = common.k {
        cfg.learner.k = k;
        cfg.partition.k = k;
    }
    if let Some(q) = common.q {
        cfg.learner.q = q;
    }
    if let Some(r) = common.missing_ratio {
        cfg.missing.ratio = r;
    }
    let report = lsgp_cli::run_experiment(&cfg)?;
    eprintln!(
        "{:?}: {} metrics in {:.2}s -> {}",
        report.task,
        report.metrics,
        report.seconds,
        cfg.output_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
