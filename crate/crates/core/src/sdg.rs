//! Model-based stochastic dual gradient (SDG) solver.
//!
//! Dualizing the expected power budget with multiplier `λ ≥ 0` decouples the
//! allocation across carriers: for every CSI draw `h` and carrier `i`, the
//! Lagrangian maximizer is the one-dimensional problem
//!
//! ```text
//! p_i(h; λ) = argmax_{p ∈ [0, p_s]}  ω_i · ln(1 + CNR(p, h_i)) - λ·p
//! ```
//!
//! The capacity curve is S-shaped rather than concave, so [`primal_step`]
//! scans a uniform grid for the global basin and only then polishes with a
//! golden-section search. The multiplier follows a projected stochastic
//! subgradient step on the dual,
//!
//! ```text
//! λ' = [ λ - η·(P_T - (1/S) Σ_j Σ_i p_{j,i}) ]₊
//! ```
//!
//! with the expectation replaced by an `S`-sample batch mean. Under the
//! expected (not instantaneous) budget the problem has no duality gap, so
//! tracking `λ` while maximizing per-state Lagrangians recovers the optimal
//! power policy; the iterates hover around `λ*` with an `O(η)` band.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capacity::{
    capacity, weighted_sum_capacity, CapacityError, PowerAllocation, SystemParams, Weights,
};
use crate::channel::{ChannelError, ChannelParams, CsiVector};
use crate::experiment::EvalSchedule;

/// Errors from the SDG solver.
#[derive(Debug, Error, PartialEq)]
pub enum SdgError {
    #[error("dual step needs a nonempty batch of allocations")]
    EmptyBatch,
    #[error("config: {message}")]
    InvalidConfig { message: String },
    #[error("objective became non-finite ({value}) at iteration {iteration}")]
    NonFiniteObjective { iteration: u64, value: f64 },
    #[error("held-out evaluation failed: {message}")]
    Eval { message: String },
    #[error(transparent)]
    Capacity(#[from] CapacityError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Stepsize schedules for the dual (and the model-free primal) updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `η_k = base`.
    Constant,
    /// `η_k = base / √(k+1)`.
    InvSqrt,
}

/// Stepsize at iteration `k` (0-based) for the given schedule.
pub fn step_size(base: f64, kind: ScheduleKind, k: u64) -> f64 {
    match kind {
        ScheduleKind::Constant => base,
        ScheduleKind::InvSqrt => base / ((k + 1) as f64).sqrt(),
    }
}

/// The dual iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualState {
    pub lambda: f64,
}

/// Solver configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdgConfig {
    /// Number of primal/dual iterations.
    pub iterations: u64,
    /// CSI samples per iteration (`S`).
    pub batch_size: usize,
    /// Dual stepsize base value.
    pub eta: f64,
    /// Dual stepsize schedule.
    pub eta_schedule: ScheduleKind,
    /// Grid points for the global scan of the per-carrier maximization.
    pub grid_points: usize,
    /// Width tolerance (in watts) of the golden-section refinement.
    pub refine_tol: f64,
    /// Initial multiplier λ₀ ≥ 0.
    pub lambda0: f64,
}

impl SdgConfig {
    /// Defaults for a budget `p_t`: 2000 iterations of batches of 32, a
    /// constant dual step `0.05/p_t` (so one saturated step moves λ by 0.05),
    /// a 256-point scan refined to 1e-9 W, starting from λ₀ = 0.
    pub fn defaults_for(p_t: f64) -> Self {
        SdgConfig {
            iterations: 2000,
            batch_size: 32,
            eta: 0.05 / p_t,
            eta_schedule: ScheduleKind::Constant,
            grid_points: 256,
            refine_tol: 1e-9,
            lambda0: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SdgError> {
        let fail = |message: String| Err(SdgError::InvalidConfig { message });
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.grid_points < 2 {
            return fail(format!("grid_points must be ≥ 2, got {}", self.grid_points));
        }
        if !(self.refine_tol.is_finite() && self.refine_tol > 0.0) {
            return fail(format!("refine_tol must be positive, got {}", self.refine_tol));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return fail(format!("eta must be nonnegative, got {}", self.eta));
        }
        if !(self.lambda0.is_finite() && self.lambda0 >= 0.0) {
            return fail(format!("lambda0 must be nonnegative, got {}", self.lambda0));
        }
        Ok(())
    }
}

/// One trajectory row: the state and batch estimates at an iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: u64,
    pub lambda: f64,
    /// Estimate of `E[Σ ω_i C_i]` (batch mean while training, held-out mean
    /// in evaluation rows).
    pub objective: f64,
    /// Budget slack estimate `P_T - E[Σ p_i]`.
    pub slack: f64,
}

/// The deterministic allocation policy induced by a multiplier: maximize the
/// per-carrier Lagrangian at `lambda` for each CSI draw.
#[derive(Debug, Clone)]
pub struct SdgPolicy {
    pub lambda: f64,
    pub weights: Weights,
    pub sys: SystemParams,
    pub p_s: f64,
    pub cfg: SdgConfig,
}

impl SdgPolicy {
    pub fn allocate(&self, csi: &CsiVector) -> Result<PowerAllocation, SdgError> {
        if csi.len() != self.weights.len() {
            return Err(CapacityError::LengthMismatch {
                powers: csi.len(),
                csi: csi.len(),
                weights: self.weights.len(),
            }
            .into());
        }
        Ok(PowerAllocation::new(
            csi.h
                .iter()
                .zip(&self.weights.w)
                .map(|(&h, &w)| primal_step(self.lambda, h, w, &self.sys, self.p_s, &self.cfg))
                .collect(),
        ))
    }
}

/// Full solver output.
#[derive(Debug, Clone)]
pub struct SolveTrajectory {
    /// One record per training iteration (batch estimates).
    pub records: Vec<IterationRecord>,
    /// Held-out evaluation records (empty when no evaluator was supplied).
    pub eval: Vec<IterationRecord>,
    pub final_lambda: f64,
    pub policy: SdgPolicy,
}

// ---------------------------------------------------------------------------
// Primal and dual steps
// ---------------------------------------------------------------------------

const INV_PHI: f64 = 0.618_033_988_749_894_9; // 1/φ

/// Golden-section maximization of `f` on `[a, b]` down to width `tol`.
/// On ties the left subinterval is kept, biasing toward smaller arguments.
fn golden_section_max(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Global maximizer of the per-carrier Lagrangian
/// `ω·ln(1 + CNR(p, h)) - λ·p` over `p ∈ [0, p_s]`.
///
/// A `cfg.grid_points`-point scan locates the best basin (the integrand is
/// not concave, so a purely local search could stall on the convex toe of the
/// capacity curve), then golden-section refinement narrows the bracket to
/// `cfg.refine_tol`. Ties are broken toward the smaller power, and the
/// refined point only replaces the best grid point when it is no worse.
pub fn primal_step(
    lambda: f64,
    h: f64,
    omega: f64,
    sys: &SystemParams,
    p_s: f64,
    cfg: &SdgConfig,
) -> f64 {
    let g = |p: f64| omega * capacity(p, h, sys) - lambda * p;

    let n = cfg.grid_points.max(2);
    let step = p_s / (n - 1) as f64;
    let grid = |j: usize| if j == n - 1 { p_s } else { step * j as f64 };

    let mut best_j = 0usize;
    let mut best_val = g(0.0);
    for j in 1..n {
        let v = g(grid(j));
        if v > best_val {
            best_val = v;
            best_j = j;
        }
    }

    let lo = if best_j == 0 { 0.0 } else { grid(best_j - 1) };
    let hi = if best_j == n - 1 { p_s } else { grid(best_j + 1) };
    let (x, fx) = golden_section_max(&g, lo, hi, cfg.refine_tol);

    let best_p = grid(best_j);
    if fx > best_val || (fx == best_val && x < best_p) {
        x
    } else {
        best_p
    }
}

/// Projected stochastic dual descent step over a batch of allocations:
/// `λ' = [λ - η·(p_t - mean_j Σ_i p_{j,i})]₊`. With `eta = 0` the state is
/// returned unchanged; an empty batch is an error.
pub fn dual_step(
    state: DualState,
    allocations: &[PowerAllocation],
    p_t: f64,
    eta: f64,
) -> Result<DualState, SdgError> {
    if allocations.is_empty() {
        return Err(SdgError::EmptyBatch);
    }
    let mean_total =
        allocations.iter().map(PowerAllocation::total).sum::<f64>() / allocations.len() as f64;
    Ok(DualState {
        lambda: (state.lambda - eta * (p_t - mean_total)).max(0.0),
    })
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Runs the solver: per iteration, draw `S` CSI vectors, maximize the
/// per-carrier Lagrangians at the current `λ`, record batch estimates and
/// take a dual step. When an [`EvalSchedule`] is supplied, the induced
/// deterministic policy is additionally scored on the held-out CSI set every
/// `eval.every` iterations.
#[allow(clippy::too_many_arguments)]
pub fn run<R: Rng + ?Sized>(
    cfg: &SdgConfig,
    chan: &ChannelParams,
    sys: &SystemParams,
    weights: &Weights,
    p_t: f64,
    p_s: f64,
    rng: &mut R,
    eval: Option<&EvalSchedule>,
) -> Result<SolveTrajectory, SdgError> {
    cfg.validate()?;
    chan.validate()?;
    sys.validate()?;
    if weights.len() != chan.m() {
        return Err(CapacityError::LengthMismatch {
            powers: chan.m(),
            csi: chan.m(),
            weights: weights.len(),
        }
        .into());
    }
    if !(p_t > 0.0 && p_s > 0.0) {
        return Err(SdgError::InvalidConfig {
            message: format!("p_t and p_s must be positive, got {p_t} and {p_s}"),
        });
    }

    let policy_for = |lambda: f64| SdgPolicy {
        lambda,
        weights: weights.clone(),
        sys: sys.clone(),
        p_s,
        cfg: cfg.clone(),
    };

    let mut state = DualState {
        lambda: cfg.lambda0,
    };
    let mut records = Vec::with_capacity(cfg.iterations as usize);
    let mut eval_records = Vec::new();

    for k in 0..cfg.iterations {
        let batch = chan.sample_csi(rng, cfg.batch_size);
        let policy = policy_for(state.lambda);
        let mut allocations = Vec::with_capacity(batch.len());
        let mut objective = 0.0;
        for csi in &batch {
            let alloc = policy.allocate(csi)?;
            objective += weighted_sum_capacity(&alloc, csi, weights, sys)?;
            allocations.push(alloc);
        }
        objective /= batch.len() as f64;
        if !objective.is_finite() {
            return Err(SdgError::NonFiniteObjective {
                iteration: k,
                value: objective,
            });
        }
        let mean_total =
            allocations.iter().map(PowerAllocation::total).sum::<f64>() / batch.len() as f64;

        records.push(IterationRecord {
            iteration: k,
            lambda: state.lambda,
            objective,
            slack: p_t - mean_total,
        });

        let eta_k = step_size(cfg.eta, cfg.eta_schedule, k);
        state = dual_step(state, &allocations, p_t, eta_k)?;

        if let Some(schedule) = eval {
            if schedule.due(k + 1, cfg.iterations) {
                let policy = policy_for(state.lambda);
                let (obj, slack) = schedule
                    .evaluator
                    .score(|csi| policy.allocate(csi).map_err(|e| e.to_string()))
                    .map_err(|message| SdgError::Eval { message })?;
                eval_records.push(IterationRecord {
                    iteration: k + 1,
                    lambda: state.lambda,
                    objective: obj,
                    slack,
                });
            }
        }
    }

    Ok(SolveTrajectory {
        records,
        eval: eval_records,
        final_lambda: state.lambda,
        policy: policy_for(state.lambda),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use proptest::prelude::*;

    fn test_cfg() -> SdgConfig {
        SdgConfig::defaults_for(1.2)
    }

    /// A CSI level in the thermal-noise-limited region, where the capacity
    /// curve actually bends over [0, 0.3] W.
    const H_CURVED: f64 = 1.2e-8;

    #[test]
    fn zero_multiplier_saturates_the_carrier() {
        let sys = SystemParams::default();
        let p = primal_step(0.0, H_CURVED, 0.8, &sys, 0.3, &test_cfg());
        assert_eq!(p, 0.3, "λ = 0 must return p_s exactly");
    }

    #[test]
    fn zero_weight_switches_the_carrier_off() {
        let sys = SystemParams::default();
        let p = primal_step(1.0, H_CURVED, 0.0, &sys, 0.3, &test_cfg());
        assert_eq!(p, 0.0);
        // ω = 0 and λ = 0 leaves a flat objective; smaller-power tie rule.
        let p = primal_step(0.0, H_CURVED, 0.0, &sys, 0.3, &test_cfg());
        assert_eq!(p, 0.0);
    }

    #[test]
    fn prohibitive_price_switches_the_carrier_off() {
        let sys = SystemParams::default();
        let omega = 0.7;
        // Upper-bound the capacity slope on a dense grid, then price above it.
        let mut max_slope: f64 = 0.0;
        let n = 20_000;
        for j in 0..n {
            let p0 = 0.3 * j as f64 / n as f64;
            let p1 = 0.3 * (j + 1) as f64 / n as f64;
            let slope = (capacity(p1, H_CURVED, &sys) - capacity(p0, H_CURVED, &sys)) / (p1 - p0);
            max_slope = max_slope.max(slope);
        }
        let lambda = omega * max_slope * 1.05;
        assert_eq!(
            primal_step(lambda, H_CURVED, omega, &sys, 0.3, &test_cfg()),
            0.0
        );
    }

    #[test]
    fn primal_step_beats_a_dense_grid_oracle() {
        // Spot check against a 10⁴-point brute-force maximizer (the
        // acceptance suite runs ≥ 100 instances against 10⁵ points).
        let sys = SystemParams::default();
        let mut rng = stream_rng(101, Stream::SdgTrain);
        let cfg = test_cfg();
        for _ in 0..25 {
            let h = H_CURVED * (0.2 + 3.0 * rng.random::<f64>());
            let omega = rng.random::<f64>();
            let lambda = 12.0 * rng.random::<f64>();
            let g = |p: f64| omega * capacity(p, h, &sys) - lambda * p;
            let p_star = primal_step(lambda, h, omega, &sys, 0.3, &cfg);
            let mut oracle = f64::NEG_INFINITY;
            for j in 0..=10_000 {
                oracle = oracle.max(g(0.3 * j as f64 / 10_000.0));
            }
            let got = g(p_star);
            assert!(
                got >= oracle - 1e-4 * oracle.abs().max(1e-12),
                "primal_step value {got} below oracle {oracle} (λ={lambda}, ω={omega}, h={h})"
            );
        }
    }

    #[test]
    fn dual_step_projects_and_respects_eta() {
        let batch = vec![
            PowerAllocation::new(vec![0.1, 0.2]),
            PowerAllocation::new(vec![0.3, 0.0]),
        ];
        // mean total = (0.3 + 0.3)/2 = 0.3; with p_t = 1.2, gradient = 0.9.
        let s = dual_step(DualState { lambda: 0.5 }, &batch, 1.2, 0.1).unwrap();
        assert!((s.lambda - (0.5 - 0.1 * 0.9)).abs() < 1e-15);
        // Projection at zero.
        let s = dual_step(DualState { lambda: 0.01 }, &batch, 1.2, 1.0).unwrap();
        assert_eq!(s.lambda, 0.0);
        // η = 0 is a no-op.
        let s = dual_step(DualState { lambda: 0.7 }, &batch, 1.2, 0.0).unwrap();
        assert_eq!(s.lambda, 0.7);
        assert_eq!(
            dual_step(DualState { lambda: 0.7 }, &[], 1.2, 0.1).unwrap_err(),
            SdgError::EmptyBatch
        );
    }

    #[test]
    fn deterministic_csi_makes_batch_size_irrelevant() {
        // With σ_x² = 0 every CSI draw is identical, so the S-sample dual
        // step must equal the single-sample (deterministic) one exactly.
        let chan = ChannelParams::new(
            ChannelParams::wavelength_grid(2, 1.52e-6, 5e-9),
            0.0,
            1000.0,
            0.05,
            0.1,
            0.0,
            3e9,
        )
        .unwrap();
        let sys = SystemParams::default();
        let weights = Weights::new(vec![0.9, 0.4]).unwrap();
        let cfg = test_cfg();
        let policy = SdgPolicy {
            lambda: 2.0,
            weights: weights.clone(),
            sys: sys.clone(),
            p_s: 0.3,
            cfg: cfg.clone(),
        };
        let mut rng = stream_rng(1, Stream::SdgTrain);
        let csi = chan.sample_csi(&mut rng, 7);
        let allocations: Vec<PowerAllocation> =
            csi.iter().map(|c| policy.allocate(c).unwrap()).collect();
        let one = dual_step(DualState { lambda: 2.0 }, &allocations[..1], 1.2, 0.05).unwrap();
        let many = dual_step(DualState { lambda: 2.0 }, &allocations, 1.2, 0.05).unwrap();
        assert_eq!(one.lambda, many.lambda);
    }

    #[test]
    fn run_produces_one_record_per_iteration_and_stays_feasible_dual() {
        let chan = ChannelParams::new(
            ChannelParams::wavelength_grid(2, 1.52e-6, 5e-9),
            1e-4,
            1000.0,
            0.05,
            0.1,
            0.1,
            3e9,
        )
        .unwrap();
        let sys = SystemParams::default();
        let weights = Weights::new(vec![0.9, 0.4]).unwrap();
        let mut cfg = SdgConfig::defaults_for(0.3);
        cfg.iterations = 60;
        let mut rng = stream_rng(5, Stream::SdgTrain);
        let out = run(&cfg, &chan, &sys, &weights, 0.3, 0.3, &mut rng, None).unwrap();
        assert_eq!(out.records.len(), 60);
        assert!(out.eval.is_empty());
        for (k, r) in out.records.iter().enumerate() {
            assert_eq!(r.iteration, k as u64);
            assert!(r.lambda >= 0.0, "multiplier must stay nonnegative");
            assert!(r.objective.is_finite());
        }
        assert_eq!(out.records[0].lambda, 0.0);
        // λ must have moved off zero: the unconstrained allocation (2 × 0.3)
        // violates the 0.3 W budget.
        assert!(out.final_lambda > 0.0);
        assert_eq!(out.policy.lambda, out.final_lambda);

        // Identical seeds reproduce the trajectory exactly.
        let mut rng2 = stream_rng(5, Stream::SdgTrain);
        let again = run(&cfg, &chan, &sys, &weights, 0.3, 0.3, &mut rng2, None).unwrap();
        assert_eq!(out.records, again.records);
    }

    #[test]
    fn run_validates_shapes_and_budgets() {
        let chan = ChannelParams::new(
            ChannelParams::wavelength_grid(2, 1.52e-6, 5e-9),
            0.0,
            1000.0,
            0.05,
            0.1,
            0.1,
            1.0,
        )
        .unwrap();
        let sys = SystemParams::default();
        let bad_weights = Weights::new(vec![0.9]).unwrap();
        let cfg = test_cfg();
        let mut rng = stream_rng(5, Stream::SdgTrain);
        assert!(matches!(
            run(&cfg, &chan, &sys, &bad_weights, 1.2, 0.3, &mut rng, None),
            Err(SdgError::Capacity(CapacityError::LengthMismatch { .. }))
        ));
        let weights = Weights::new(vec![0.9, 0.4]).unwrap();
        assert!(matches!(
            run(&cfg, &chan, &sys, &weights, 0.0, 0.3, &mut rng, None),
            Err(SdgError::InvalidConfig { .. })
        ));
        let mut bad_cfg = test_cfg();
        bad_cfg.batch_size = 0;
        assert!(matches!(
            run(&bad_cfg, &chan, &sys, &weights, 1.2, 0.3, &mut rng, None),
            Err(SdgError::InvalidConfig { .. })
        ));
    }

    proptest! {
        // Revealed preference: the selected maximizer is nonincreasing in λ.
        #[test]
        fn primal_step_is_nonincreasing_in_lambda(
            h_scale in 0.1f64..5.0,
            omega in 0.01f64..1.0,
            l1 in 0.0f64..10.0,
            bump in 0.01f64..10.0,
        ) {
            let sys = SystemParams::default();
            let cfg = test_cfg();
            let h = H_CURVED * h_scale;
            let p_low = primal_step(l1, h, omega, &sys, 0.3, &cfg);
            let p_high = primal_step(l1 + bump, h, omega, &sys, 0.3, &cfg);
            prop_assert!(
                p_high <= p_low + 1e-6,
                "p*({}) = {p_low} < p*({}) = {p_high}", l1, l1 + bump
            );
        }

        // The refined point never lands outside the admissible interval.
        #[test]
        fn primal_step_respects_bounds(
            h_scale in 0.01f64..10.0,
            omega in 0.0f64..1.0,
            lambda in 0.0f64..30.0,
        ) {
            let sys = SystemParams::default();
            let p = primal_step(lambda, H_CURVED * h_scale, omega, &sys, 0.3, &test_cfg());
            prop_assert!((0.0..=0.3).contains(&p));
        }
    }
}
