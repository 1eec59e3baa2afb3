//! Experiment harness: shared held-out evaluation, the equal-power baseline,
//! and the reproducible run driver that writes CSV trajectories.
//!
//! Both solvers and the baseline are scored by the *same* routine on the
//! *same* held-out CSI set, so reported objectives are directly comparable:
//!
//! ```text
//! objective = (1/N) Σ_n Σ_i ω_i · ln(1 + CNR(p_i(h⁽ⁿ⁾), h_i⁽ⁿ⁾))
//! slack     = P_T - (1/N) Σ_n Σ_i p_i(h⁽ⁿ⁾)
//! ```
//!
//! Every random draw comes from a named stream of the master seed, and CSV
//! floats are written in shortest-roundtrip form, so identical configs
//! produce byte-identical artifacts.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use thiserror::Error;

use crate::capacity::{
    weighted_sum_capacity, AnalyticOracle, PowerAllocation, SystemParams, Weights,
};
use crate::channel::{ChannelParams, CsiVector};
use crate::config::{ConfigError, ExperimentConfig};
use crate::pddl::{self, PddlError, PddlOutput};
use crate::rng::{stream_rng, Stream};
use crate::sdg::{self, SdgError, SolveTrajectory};

/// Budget-tracking window: a solver "reaches tolerance" when the mean
/// absolute slack over this many trailing iterations is within 5% of `P_T`.
pub const TRAILING_WINDOW: usize = 100;

pub const SDG_TRAIN_CSV: &str = "sdg_train.csv";
pub const SDG_EVAL_CSV: &str = "sdg_eval.csv";
pub const PDDL_TRAIN_CSV: &str = "pddl_train.csv";
pub const PDDL_EVAL_CSV: &str = "pddl_eval.csv";
pub const BASELINE_EVAL_CSV: &str = "baseline_eval.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const POLICY_CHECKPOINT: &str = "pddl_policy.ckpt";
pub const CONFIG_USED: &str = "config_used.toml";
pub const PLOT_SCRIPT: &str = "plot.py";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sdg(#[from] SdgError),
    #[error(transparent)]
    Pddl(#[from] PddlError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("invariant violated: {message}")]
    Invariant { message: String },
}

// ---------------------------------------------------------------------------
// Held-out evaluation
// ---------------------------------------------------------------------------

/// A frozen held-out CSI set plus everything needed to score an allocation
/// rule on it. Build one per experiment and share it across solvers so that
/// every reported objective is an estimate over the same channel draws.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub csi: Vec<CsiVector>,
    pub weights: Weights,
    pub sys: SystemParams,
    pub p_t: f64,
}

impl Evaluator {
    /// Draws `samples` held-out CSI vectors from the channel.
    pub fn from_channel<R: Rng + ?Sized>(
        chan: &ChannelParams,
        weights: Weights,
        sys: SystemParams,
        p_t: f64,
        samples: usize,
        rng: &mut R,
    ) -> Self {
        Evaluator {
            csi: chan.sample_csi(rng, samples),
            weights,
            sys,
            p_t,
        }
    }

    /// Applies `rule` to every held-out CSI vector and returns
    /// `(mean weighted sum capacity, P_T - mean total power)`.
    pub fn score<F>(&self, mut rule: F) -> Result<(f64, f64), String>
    where
        F: FnMut(&CsiVector) -> Result<PowerAllocation, String>,
    {
        if self.csi.is_empty() {
            return Err("evaluator holds no CSI samples".into());
        }
        let mut objective = 0.0;
        let mut total_power = 0.0;
        for csi in &self.csi {
            let alloc = rule(csi)?;
            objective += weighted_sum_capacity(&alloc, csi, &self.weights, &self.sys)
                .map_err(|e| e.to_string())?;
            total_power += alloc.total();
        }
        let n = self.csi.len() as f64;
        Ok((objective / n, self.p_t - total_power / n))
    }
}

/// When to run held-out evaluation during training: every `every`-th
/// iteration and always after the final one (`every = 0` means final only).
#[derive(Debug, Clone, Copy)]
pub struct EvalSchedule<'a> {
    pub evaluator: &'a Evaluator,
    pub every: u64,
}

impl EvalSchedule<'_> {
    /// `completed` is the number of finished iterations (1-based).
    pub fn due(&self, completed: u64, total: u64) -> bool {
        if self.every == 0 {
            return completed == total;
        }
        completed.is_multiple_of(self.every) || completed == total
    }
}

// ---------------------------------------------------------------------------
// Baseline
// ---------------------------------------------------------------------------

/// Non-adaptive benchmark: every carrier gets `min(P_T/m, p_s)` regardless
/// of the CSI. It meets the expected-power budget with equality whenever the
/// per-carrier cap is not binding.
pub fn equal_power_allocation(m: usize, p_t: f64, p_s: f64) -> PowerAllocation {
    PowerAllocation::new(vec![(p_t / m as f64).min(p_s); m])
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

/// First iteration index at which the trailing-`window` mean of |slack|
/// drops to 5% of the budget, if it ever does.
pub fn iterations_to_tolerance(slacks: &[f64], p_t: f64, window: usize) -> Option<u64> {
    if window == 0 || slacks.len() < window {
        return None;
    }
    let tol = 0.05 * p_t;
    let mut sum: f64 = slacks[..window].iter().map(|s| s.abs()).sum();
    if sum / window as f64 <= tol {
        return Some(window as u64 - 1);
    }
    for k in window..slacks.len() {
        sum += slacks[k].abs() - slacks[k - window].abs();
        if sum / window as f64 <= tol {
            return Some(k as u64);
        }
    }
    None
}

/// One line of the final comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub solver: String,
    /// Held-out objective of the final (deterministic) policy.
    pub final_objective: f64,
    /// Held-out budget slack of the final policy.
    pub final_slack: f64,
    /// See [`iterations_to_tolerance`]; empty for the baseline.
    pub iterations_to_tolerance: Option<u64>,
    /// `(sdg_objective - objective) / sdg_objective`; empty when SDG did not
    /// run in this invocation.
    pub rel_gap_vs_sdg: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ReportRow>,
}

// ---------------------------------------------------------------------------
// Run driver
// ---------------------------------------------------------------------------

/// Which solvers a [`run_experiment`] invocation trains. The equal-power
/// baseline is always scored — it is free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverSelection {
    Sdg,
    Pddl,
    Baseline,
    All,
}

impl SolverSelection {
    fn wants_sdg(self) -> bool {
        matches!(self, SolverSelection::Sdg | SolverSelection::All)
    }
    fn wants_pddl(self) -> bool {
        matches!(self, SolverSelection::Pddl | SolverSelection::All)
    }
}

/// CLI-style overrides applied on top of a parsed config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    /// Caps both solvers' iteration counts (quick smoke runs).
    pub iterations: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.experiment.seed = seed;
        }
        if let Some(dir) = &self.out_dir {
            cfg.experiment.out_dir = Some(dir.clone());
        }
        if let Some(iters) = self.iterations {
            cfg.sdg.iterations = Some(iters);
            cfg.pddl.iterations = Some(iters);
        }
    }
}

/// Everything a run produced, in memory. Files are only written when the
/// config names an output directory.
#[derive(Debug)]
pub struct RunArtifacts {
    pub out_dir: Option<PathBuf>,
    pub report: ComparisonReport,
    pub evaluator: Evaluator,
    pub sdg: Option<SolveTrajectory>,
    pub pddl: Option<PddlOutput>,
    /// Held-out `(objective, slack)` of the equal-power baseline.
    pub baseline: (f64, f64),
}

/// Runs the selected solvers under `cfg` and scores everything on one shared
/// held-out CSI set. Randomness is fully determined by the config seeds:
/// weights, held-out CSI, each solver's training draws and the network
/// initialization all use separate named streams, so solvers can be run
/// alone or together — sequentially or in parallel — without changing each
/// other's results.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    which: SolverSelection,
) -> Result<RunArtifacts, ExperimentError> {
    run_experiment_with(cfg, which, false)
}

/// [`run_experiment`] with the two solvers optionally trained on separate
/// threads. The artifacts are byte-identical either way: each solver owns a
/// named RNG stream and file writing stays on the calling thread.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    which: SolverSelection,
    parallel: bool,
) -> Result<RunArtifacts, ExperimentError> {
    cfg.validate()?;
    let exp = &cfg.experiment;
    let (m, p_t, p_s, seed) = (exp.m, exp.p_t, exp.p_s, exp.seed);
    let chan = cfg.channel_params()?;
    let sys = cfg.system_params();
    let weights = cfg.resolved_weights()?;

    let mut eval_rng = stream_rng(seed, Stream::Eval);
    let evaluator = Evaluator::from_channel(
        &chan,
        weights.clone(),
        sys.clone(),
        p_t,
        exp.eval_samples,
        &mut eval_rng,
    );
    let schedule = EvalSchedule {
        evaluator: &evaluator,
        every: exp.eval_every,
    };
    let invariant = |message: String| ExperimentError::Invariant { message };

    let baseline_alloc = equal_power_allocation(m, p_t, p_s);
    let baseline = evaluator
        .score(|_| Ok(baseline_alloc.clone()))
        .map_err(invariant)?;

    let train_sdg = || -> Result<SolveTrajectory, ExperimentError> {
        let mut rng = stream_rng(seed, Stream::SdgTrain);
        Ok(sdg::run(
            &cfg.sdg_config(),
            &chan,
            &sys,
            &weights,
            p_t,
            p_s,
            &mut rng,
            Some(&schedule),
        )?)
    };
    let train_pddl = || -> Result<PddlOutput, ExperimentError> {
        let oracle = AnalyticOracle::new(sys.clone());
        let mut init_rng = stream_rng(seed, Stream::PddlInit);
        let mut train_rng = stream_rng(seed, Stream::PddlTrain);
        Ok(pddl::run(
            &cfg.pddl_config(),
            &chan,
            &weights,
            p_t,
            p_s,
            &oracle,
            &mut init_rng,
            &mut train_rng,
            Some(&schedule),
        )?)
    };

    let (sdg_out, pddl_out) = if parallel && which.wants_sdg() && which.wants_pddl() {
        let (sdg_res, pddl_res) = std::thread::scope(|scope| {
            let sdg_handle = scope.spawn(train_sdg);
            let pddl_handle = scope.spawn(train_pddl);
            (
                sdg_handle.join().expect("SDG thread panicked"),
                pddl_handle.join().expect("PDDL thread panicked"),
            )
        });
        (Some(sdg_res?), Some(pddl_res?))
    } else {
        let sdg_out = if which.wants_sdg() {
            Some(train_sdg()?)
        } else {
            None
        };
        let pddl_out = if which.wants_pddl() {
            Some(train_pddl()?)
        } else {
            None
        };
        (sdg_out, pddl_out)
    };

    // Final deterministic policies, all scored through the same evaluator.
    let sdg_final = match &sdg_out {
        Some(traj) => Some(
            evaluator
                .score(|csi| traj.policy.allocate(csi).map_err(|e| e.to_string()))
                .map_err(invariant)?,
        ),
        None => None,
    };
    let pddl_final = match &pddl_out {
        Some(out) => Some(
            evaluator
                .score(|csi| out.params.mean_allocation(csi).map_err(|e| e.to_string()))
                .map_err(invariant)?,
        ),
        None => None,
    };

    let gap = |objective: f64| {
        sdg_final.map(|(sdg_obj, _)| (sdg_obj - objective) / sdg_obj)
    };
    let mut report = ComparisonReport::default();
    report.rows.push(ReportRow {
        solver: "baseline".into(),
        final_objective: baseline.0,
        final_slack: baseline.1,
        iterations_to_tolerance: None,
        rel_gap_vs_sdg: gap(baseline.0),
    });
    if let (Some(traj), Some((obj, slack))) = (&sdg_out, sdg_final) {
        let slacks: Vec<f64> = traj.records.iter().map(|r| r.slack).collect();
        report.rows.push(ReportRow {
            solver: "sdg".into(),
            final_objective: obj,
            final_slack: slack,
            iterations_to_tolerance: iterations_to_tolerance(&slacks, p_t, TRAILING_WINDOW),
            rel_gap_vs_sdg: gap(obj),
        });
    }
    if let (Some(out), Some((obj, slack))) = (&pddl_out, pddl_final) {
        let slacks: Vec<f64> = out.records.iter().map(|r| r.slack).collect();
        report.rows.push(ReportRow {
            solver: "pddl".into(),
            final_objective: obj,
            final_slack: slack,
            iterations_to_tolerance: iterations_to_tolerance(&slacks, p_t, TRAILING_WINDOW),
            rel_gap_vs_sdg: gap(obj),
        });
    }

    let artifacts = RunArtifacts {
        out_dir: exp.out_dir.clone(),
        report,
        evaluator,
        sdg: sdg_out,
        pddl: pddl_out,
        baseline,
    };
    if let Some(dir) = &artifacts.out_dir {
        write_artifacts(dir, cfg, &artifacts)?;
    }
    Ok(artifacts)
}

// ---------------------------------------------------------------------------
// File output
// ---------------------------------------------------------------------------

fn write_csv<I: Iterator<Item = String>>(
    path: &Path,
    header: &str,
    rows: I,
) -> std::io::Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{header}")?;
    for row in rows {
        writeln!(out, "{row}")?;
    }
    out.flush()
}

fn opt_str<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_artifacts(
    dir: &Path,
    cfg: &ExperimentConfig,
    artifacts: &RunArtifacts,
) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir)?;

    if let Some(traj) = &artifacts.sdg {
        write_csv(
            &dir.join(SDG_TRAIN_CSV),
            "iteration,lambda,objective,slack",
            traj.records.iter().map(|r| {
                format!("{},{},{},{}", r.iteration, r.lambda, r.objective, r.slack)
            }),
        )?;
        write_csv(
            &dir.join(SDG_EVAL_CSV),
            "iteration,lambda,objective,slack",
            traj.eval.iter().map(|r| {
                format!("{},{},{},{}", r.iteration, r.lambda, r.objective, r.slack)
            }),
        )?;
    }
    if let Some(out) = &artifacts.pddl {
        write_csv(
            &dir.join(PDDL_TRAIN_CSV),
            "iteration,lambda,objective,slack,mean_sigma,grad_norm",
            out.records.iter().map(|r| {
                format!(
                    "{},{},{},{},{},{}",
                    r.iteration, r.lambda, r.objective, r.slack, r.mean_sigma, r.grad_norm
                )
            }),
        )?;
        write_csv(
            &dir.join(PDDL_EVAL_CSV),
            "iteration,lambda,objective,slack",
            out.eval.iter().map(|r| {
                format!("{},{},{},{}", r.iteration, r.lambda, r.objective, r.slack)
            }),
        )?;
        out.params.save(&dir.join(POLICY_CHECKPOINT))?;
    }
    write_csv(
        &dir.join(BASELINE_EVAL_CSV),
        "iteration,objective,slack",
        std::iter::once(format!(
            "0,{},{}",
            artifacts.baseline.0, artifacts.baseline.1
        )),
    )?;
    write_csv(
        &dir.join(REPORT_CSV),
        "solver,final_objective,final_slack,iterations_to_tolerance,rel_gap_vs_sdg",
        artifacts.report.rows.iter().map(|r| {
            format!(
                "{},{},{},{},{}",
                r.solver,
                r.final_objective,
                r.final_slack,
                opt_str(r.iterations_to_tolerance),
                opt_str(r.rel_gap_vs_sdg)
            )
        }),
    )?;
    fs::write(dir.join(CONFIG_USED), cfg.to_toml_string()?)?;
    emit_plot_script(dir)?;
    Ok(())
}

/// Writes a self-contained matplotlib script next to the CSVs. It reads the
/// trajectories through relative paths, skips solvers that were not run, and
/// exits with a clear message when nothing is there to plot.
pub fn emit_plot_script(dir: &Path) -> std::io::Result<PathBuf> {
    let path = dir.join(PLOT_SCRIPT);
    fs::write(&path, PLOT_PY)?;
    Ok(path)
}

const PLOT_PY: &str = r#"#!/usr/bin/env python3
"""Plot the training/evaluation curves produced by a run in this directory."""
import csv
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def read_rows(name):
    path = os.path.join(HERE, name)
    if not os.path.exists(path):
        return None
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return rows or None


def series(rows, field):
    return [float(r[field]) for r in rows]


sdg_eval = read_rows("sdg_eval.csv")
pddl_eval = read_rows("pddl_eval.csv")
baseline = read_rows("baseline_eval.csv")
sdg_train = read_rows("sdg_train.csv")
pddl_train = read_rows("pddl_train.csv")

if not any([sdg_eval, pddl_eval, baseline, sdg_train, pddl_train]):
    sys.exit("no CSV trajectories found next to plot.py -- run the experiment first")

fig, (ax_obj, ax_dual) = plt.subplots(1, 2, figsize=(11, 4))

if sdg_eval:
    ax_obj.plot(series(sdg_eval, "iteration"), series(sdg_eval, "objective"),
                label="SDG (held-out)")
if pddl_eval:
    ax_obj.plot(series(pddl_eval, "iteration"), series(pddl_eval, "objective"),
                label="PDDL (held-out)")
if baseline:
    ax_obj.axhline(float(baseline[0]["objective"]), color="gray",
                   linestyle="--", label="equal power")
ax_obj.set_xlabel("iteration")
ax_obj.set_ylabel("weighted sum capacity (nats)")
ax_obj.legend()
ax_obj.grid(True, alpha=0.3)

if sdg_train:
    ax_dual.plot(series(sdg_train, "iteration"), series(sdg_train, "lambda"),
                 label="SDG lambda")
    ax_dual.plot(series(sdg_train, "iteration"), series(sdg_train, "slack"),
                 label="SDG slack", alpha=0.5)
if pddl_train:
    ax_dual.plot(series(pddl_train, "iteration"), series(pddl_train, "lambda"),
                 label="PDDL lambda")
    ax_dual.plot(series(pddl_train, "iteration"), series(pddl_train, "slack"),
                 label="PDDL slack", alpha=0.5)
ax_dual.set_xlabel("iteration")
ax_dual.set_ylabel("multiplier / slack (W)")
ax_dual.legend()
ax_dual.grid(True, alpha=0.3)

fig.tight_layout()
out = os.path.join(HERE, "curves.png")
fig.savefig(out, dpi=150)
print(f"wrote {out}")
"#;
