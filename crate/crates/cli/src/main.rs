//! `rofso` — train and compare power-allocation policies for WDM radio-on-FSO
//! links from a TOML experiment config.
//!
//! Exit codes: 0 success, 2 configuration problems, 3 i/o failures,
//! 4 violated run invariants, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rofso_core::config::ExperimentConfig;
use rofso_core::experiment::{
    emit_plot_script, run_experiment_with, ExperimentError, Overrides, RunArtifacts,
    SolverSelection,
};

#[derive(Parser)]
#[command(
    name = "rofso",
    version,
    about = "Optimal WDM power allocation over radio-on-FSO links",
    long_about = "Trains a model-based stochastic dual gradient solver and/or a model-free \
                  primal-dual deep learning solver on a simulated fading FSO link, scores them \
                  against an equal-power baseline on a shared held-out CSI set, and writes CSV \
                  trajectories plus a plot script."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override (or set) the output directory for CSVs and checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cap both solvers' iteration counts (quick smoke runs).
    #[arg(long)]
    iters: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the model-based stochastic dual gradient solver.
    RunSdg(RunArgs),
    /// Train the model-free primal-dual deep learning solver.
    RunPddl(RunArgs),
    /// Score the non-adaptive equal-power baseline.
    RunBaseline(RunArgs),
    /// Train both solvers and compare them against the baseline.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Train the two solvers on separate threads (identical results).
        #[arg(long)]
        parallel: bool,
    },
    /// Write the standalone matplotlib plot script into a directory.
    PlotScript {
        /// Directory to place plot.py in (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &ExperimentError) -> u8 {
    match err {
        ExperimentError::Config(_) => 2,
        ExperimentError::Io(_) => 3,
        ExperimentError::Invariant { .. } => 4,
        _ => 1,
    }
}

fn dispatch(command: Command) -> Result<(), ExperimentError> {
    let (args, which, parallel) = match command {
        Command::RunSdg(args) => (args, SolverSelection::Sdg, false),
        Command::RunPddl(args) => (args, SolverSelection::Pddl, false),
        Command::RunBaseline(args) => (args, SolverSelection::Baseline, false),
        Command::Compare { run, parallel } => (run, SolverSelection::All, parallel),
        Command::PlotScript { out } => {
            std::fs::create_dir_all(&out)?;
            let path = emit_plot_script(&out)?;
            println!("wrote {}", path.display());
            return Ok(());
        }
    };

    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    Overrides {
        seed: args.seed,
        out_dir: args.out,
        iterations: args.iters,
    }
    .apply(&mut cfg);
    let artifacts = run_experiment_with(&cfg, which, parallel)?;
    print_report(&artifacts);
    Ok(())
}

fn print_report(artifacts: &RunArtifacts) {
    println!(
        "{:<10} {:>16} {:>14} {:>14} {:>12}",
        "solver", "objective (nats)", "slack (W)", "iters-to-tol", "gap-vs-sdg"
    );
    for row in &artifacts.report.rows {
        let iters = row
            .iterations_to_tolerance
            .map(|k| k.to_string())
            .unwrap_or_else(|| "-".into());
        let gap = row
            .rel_gap_vs_sdg
            .map(|g| format!("{g:.4}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:<10} {:>16.6} {:>14.6} {:>14} {:>12}",
            row.solver, row.final_objective, row.final_slack, iters, gap
        );
    }
    match &artifacts.out_dir {
        Some(dir) => println!("artifacts written to {}", dir.display()),
        None => println!("no output directory configured; nothing written"),
    }
}
