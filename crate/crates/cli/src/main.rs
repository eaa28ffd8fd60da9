use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sebm_cli::{emit_outputs, parse_config_with, run_experiment, ExperimentKind, Overrides};

/// Stochastic Budyko/Sellers energy balance experiments.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one sample path and write the trajectory.
    Simulate(Flags),
    /// Monte Carlo check of the Wiener isometry.
    Isometry(Flags),
    /// Monte Carlo check of the stochastic convolution isometry.
    Convolution(Flags),
    /// Comparison estimate on shared noise.
    Compare(Flags),
    /// Convergence as the noise intensity goes to zero.
    ConvergeEps(Flags),
    /// Convergence of the Yosida approximation.
    ConvergeLambda(Flags),
    /// Equilibria and minimal/maximal solutions at one Q.
    Stationary(Flags),
    /// Equilibrium count over a grid of Q.
    ScanQ(Flags),
    /// Stabilization under decaying noise.
    Longtime(Flags),
    /// Time-step and truncation study.
    ResolutionStudy(Flags),
}

#[derive(Args)]
struct Flags {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the configuration's, then `.`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (kind, flags) = match cli.command {
        Command::Simulate(f) => (ExperimentKind::Simulate, f),
        Command::Isometry(f) => (ExperimentKind::Isometry, f),
        Command::Convolution(f) => (ExperimentKind::Convolution, f),
        Command::Compare(f) => (ExperimentKind::Compare, f),
        Command::ConvergeEps(f) => (ExperimentKind::ConvergeEps, f),
        Command::ConvergeLambda(f) => (ExperimentKind::ConvergeLambda, f),
        Command::Stationary(f) => (ExperimentKind::Stationary, f),
        Command::ScanQ(f) => (ExperimentKind::ScanQ, f),
        Command::Longtime(f) => (ExperimentKind::Longtime, f),
        Command::ResolutionStudy(f) => (ExperimentKind::ResolutionStudy, f),
    };

    let text = match std::fs::read_to_string(&flags.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", flags.config.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let overrides = Overrides {
        seed: flags.seed,
        output_dir: flags.out,
        threads: flags.threads,
        kind: Some(kind),
    };
    let config = match parse_config_with(&text, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let output = match run_experiment(&config) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    let dir = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    if let Err(e) = emit_outputs(&dir, &output) {
        eprintln!("error: cannot write to {}: {e}", dir.display());
        return ExitCode::from(EXIT_RUNTIME);
    }
    for check in &output.summary.checks {
        println!("{} {}: {}", if check.passed { "PASS" } else { "FAIL" }, check.name, check.detail);
    }
    if output.summary.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECK_FAILED)
    }
}
