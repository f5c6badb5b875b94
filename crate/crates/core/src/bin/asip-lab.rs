use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use asip_lab::harness::{run, write_artifacts, ExperimentConfig, HarnessError, Task};

#[derive(Parser)]
#[command(name = "asip-lab", version, about = "Coupling, variance and deviation experiments for dependent sums")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One stationary path and its partial sums.
    Simulate(Flags),
    /// Coupling coefficients and the decay fit.
    Delta(Flags),
    /// Tail fit of |X|.
    Tail(Flags),
    /// Top and second Lyapunov exponents of a matrix law.
    Lyapunov(Flags),
    /// Long-run variance and the block variances.
    Variance(Flags),
    /// The full coupling pipeline.
    Asip(Flags),
    /// Large-deviation, regularity and alignment checks.
    Deviations(Flags),
    /// Every task that applies to the configured model.
    Report(Flags),
}

#[derive(Args)]
struct Flags {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Output directory; defaults to the config `out` or `out/<task>`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Also write SVG charts.
    #[arg(long)]
    plots: bool,
}

fn execute(task: Task, flags: &Flags) -> Result<PathBuf, HarnessError> {
    let raw = std::fs::read_to_string(&flags.config)?;
    let mut cfg = ExperimentConfig::parse(&raw).map_err(|e| HarnessError::Config(e.to_string()))?;
    cfg.task = task;
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    if let Some(n) = flags.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::Config(format!("--threads: {e}")))?;
    }
    let out = flags
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(task.name()));
    let files = run(&cfg, &raw, flags.plots)?;
    write_artifacts(&files, &out)?;
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (task, flags) = match &cli.command {
        Command::Simulate(f) => (Task::Simulate, f),
        Command::Delta(f) => (Task::Delta, f),
        Command::Tail(f) => (Task::Tail, f),
        Command::Lyapunov(f) => (Task::Lyapunov, f),
        Command::Variance(f) => (Task::Variance, f),
        Command::Asip(f) => (Task::Asip, f),
        Command::Deviations(f) => (Task::Deviations, f),
        Command::Report(f) => (Task::FullReport, f),
    };
    match execute(task, flags) {
        Ok(out) => {
            println!("{} written to {}", task.name(), out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("asip-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
