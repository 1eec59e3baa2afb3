//! Optimal WDM power allocation for radio on free-space-optics (RoFSO) links.
//!
//! A transmitter multiplexes `m` RF-modulated optical carriers onto one
//! free-space link and must split an average power budget `P_T` across them,
//! with every carrier limited to `p_s` watts, so that the expected weighted
//! sum of per-carrier capacities is maximized over the fading state `h`:
//!
//! ```text
//! maximize    E_h [ Σ_i ω_i · ln(1 + CNR(p_i(h), h_i)) ]
//! subject to  E_h [ Σ_i p_i(h) ] ≤ P_T,   0 ≤ p_i(h) ≤ p_s
//! ```
//!
//! Two solvers are provided:
//!
//! * [`sdg`] — a model-based stochastic dual gradient method that maximizes
//!   the Lagrangian exactly per channel (the capacity expression is known),
//! * [`pddl`] — a model-free primal-dual method that trains one small MLP per
//!   channel to parametrize a truncated-Gaussian power policy, using only
//!   sampled capacity values obtained through a [`capacity::CapacityOracle`].
//!
//! Supporting modules: [`channel`] (log-normal FSO fading and CSI sampling),
//! [`capacity`] (APD receiver CNR and capacity), [`mlp`] (flat-parameter
//! perceptrons with manual backprop), [`policy`] (truncated Gaussians and the
//! network output head), and [`experiment`]/[`config`] (reproducible runs,
//! CSV trajectories, comparison reports).

pub mod capacity;
pub mod channel;
pub mod config;
pub mod experiment;
pub mod math;
pub mod mlp;
pub mod pddl;
pub mod policy;
pub mod rng;
pub mod sdg;

pub use capacity::{AnalyticOracle, CapacityOracle, PowerAllocation, SystemParams, Weights};
pub use channel::{ChannelParams, CsiVector};
pub use config::{ExperimentConfig, WeightsSpec};
pub use experiment::{
    equal_power_allocation, run_experiment, run_experiment_with, ComparisonReport, EvalSchedule,
    Evaluator, Overrides, RunArtifacts, SolverSelection,
};
pub use mlp::{MlpParams, MlpSpec};
pub use pddl::{PddlConfig, PddlOutput, PolicyParams, TrainRecord};
pub use policy::{PolicyHead, TruncatedGaussian};
pub use sdg::{DualState, IterationRecord, ScheduleKind, SdgConfig, SdgPolicy, SolveTrajectory};
