//! Model-free primal-dual deep learning (PDDL) solver.
//!
//! When the CNR expression is unknown, the per-carrier Lagrangian cannot be
//! maximized in closed form. Instead each carrier `i` gets a small MLP that
//! maps its (normalized, log-domain) CSI to the two parameters of a
//! truncated-Gaussian power policy `π_i(·|h_i; θ_i)` on `[0, p_s]`. Training
//! alternates
//!
//! ```text
//! θ' = θ + δ·(1/S) Σ_j L̃_j ∇_θ log π(P_j | h_j; θ)          (REINFORCE ascent)
//! λ' = [ λ - η·(P_T - (1/S) Σ_j Σ_i P_{j,i}) ]₊             (dual descent)
//! ```
//!
//! with `L_j = Σ_i ω_i·C_{j,i} + λ·(P_T - Σ_i P_{j,i})`, where the
//! capacities `C_{j,i}` come exclusively from a [`CapacityOracle`]: the
//! trainer never evaluates the CNR model itself, so it applies verbatim to
//! links whose receiver characteristics are only observable through
//! measurements. `L̃_j` is `L_j` minus an optional running-mean baseline
//! (`variance_reduction`), which changes the estimator's variance but not
//! its expectation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capacity::{CapacityError, CapacityOracle, OracleError, PowerAllocation, Weights};
use crate::channel::{ChannelError, ChannelParams, CsiVector};
use crate::experiment::EvalSchedule;
use crate::mlp::{self, ForwardCache, MlpError, MlpParams, MlpSpec};
use crate::policy::{from_network_outputs, head_jacobian, PolicyError, PolicyHead, TruncatedGaussian};
use crate::sdg::{dual_step, step_size, DualState, IterationRecord, ScheduleKind};

const POLICY_MAGIC: &str = "pddl-policy v1";

/// Errors from the PDDL solver.
#[derive(Debug, Error)]
pub enum PddlError {
    #[error("config: {message}")]
    InvalidConfig { message: String },
    #[error("carrier index {index} out of range for {m} networks")]
    CarrierOutOfRange { index: usize, m: usize },
    #[error("oracle returned {got} capacities for {want} carriers")]
    OracleShape { got: usize, want: usize },
    #[error("parameter update stayed non-finite at iteration {iteration} after {halvings} stepsize halvings")]
    NonFiniteUpdate { iteration: u64, halvings: u32 },
    #[error("held-out evaluation failed: {message}")]
    Eval { message: String },
    #[error("checkpoint: {message}")]
    Checkpoint { message: String },
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Capacity(#[from] CapacityError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Solver configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PddlConfig {
    /// Number of primal/dual iterations.
    pub iterations: u64,
    /// CSI samples (and policy draws) per iteration (`S`).
    pub batch_size: usize,
    /// Primal (network parameter) stepsize base value.
    pub delta: f64,
    pub delta_schedule: ScheduleKind,
    /// Dual stepsize base value.
    pub eta: f64,
    pub eta_schedule: ScheduleKind,
    /// Initial multiplier λ₀ ≥ 0.
    pub lambda0: f64,
    /// Batches of CSI drawn up front to estimate input normalization.
    pub warmup_batches: usize,
    /// Subtract a running mean of past batch Lagrangians from `L_j` before
    /// weighting the score. Off by default; the estimator stays unbiased
    /// either way.
    pub variance_reduction: bool,
    /// Hidden-layer widths of each per-carrier network.
    pub hidden_layers: Vec<usize>,
    /// Policy-head σ range as fractions of `p_s`.
    pub sigma_min_frac: f64,
    pub sigma_max_frac: f64,
}

impl PddlConfig {
    /// Defaults for a budget `p_t`: 20000 iterations of batches of 32,
    /// constant stepsizes `δ = 5e-4` and `η = 0.05/p_t`, a [20, 10, 5]
    /// hidden stack, and σ squashed into `[1e-3, 0.5]·p_s`.
    pub fn defaults_for(p_t: f64) -> Self {
        PddlConfig {
            iterations: 20_000,
            batch_size: 32,
            delta: 5e-4,
            delta_schedule: ScheduleKind::Constant,
            eta: 0.05 / p_t,
            eta_schedule: ScheduleKind::Constant,
            lambda0: 0.0,
            warmup_batches: 10,
            variance_reduction: false,
            hidden_layers: vec![20, 10, 5],
            sigma_min_frac: 1e-3,
            sigma_max_frac: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), PddlError> {
        let fail = |message: String| Err(PddlError::InvalidConfig { message });
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return fail(format!("delta must be nonnegative, got {}", self.delta));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return fail(format!("eta must be nonnegative, got {}", self.eta));
        }
        if !(self.lambda0.is_finite() && self.lambda0 >= 0.0) {
            return fail(format!("lambda0 must be nonnegative, got {}", self.lambda0));
        }
        if !(self.sigma_min_frac > 0.0 && self.sigma_min_frac < self.sigma_max_frac) {
            return fail(format!(
                "need 0 < sigma_min_frac < sigma_max_frac, got {} and {}",
                self.sigma_min_frac, self.sigma_max_frac
            ));
        }
        Ok(())
    }

    /// The shared per-carrier architecture: scalar input, the configured
    /// hidden stack, and two raw outputs (pre-squash μ and σ).
    pub fn mlp_spec(&self) -> Result<MlpSpec, PddlError> {
        let mut sizes = Vec::with_capacity(self.hidden_layers.len() + 2);
        sizes.push(1);
        sizes.extend_from_slice(&self.hidden_layers);
        sizes.push(2);
        Ok(MlpSpec::new(sizes)?)
    }
}

// ---------------------------------------------------------------------------
// Input normalization
// ---------------------------------------------------------------------------

/// The network input for a CSI coefficient: `log10(h)`, floored to keep the
/// logarithm finite even for an (unphysical) zero gain.
pub fn csi_feature(h: f64) -> f64 {
    h.max(1e-300).log10()
}

/// Per-carrier standardization of the log-domain CSI. The raw coefficients
/// span orders of magnitude, so feeding them to the networks directly would
/// leave the logistic heads saturated from the start.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    /// Identity normalization for `m` carriers.
    pub fn identity(m: usize) -> Self {
        InputNorm {
            mean: vec![0.0; m],
            std: vec![1.0; m],
        }
    }

    /// Estimates mean and standard deviation of `log10(h_i)` per carrier
    /// from `samples` warmup draws. A (near-)deterministic carrier gets a
    /// unit standard deviation so the feature stays finite.
    pub fn from_warmup<R: Rng + ?Sized>(
        chan: &ChannelParams,
        samples: usize,
        rng: &mut R,
    ) -> Self {
        let m = chan.m();
        if samples == 0 {
            return InputNorm::identity(m);
        }
        let batch = chan.sample_csi(rng, samples);
        let mut mean = vec![0.0; m];
        for csi in &batch {
            for (i, &h) in csi.h.iter().enumerate() {
                mean[i] += csi_feature(h);
            }
        }
        for v in &mut mean {
            *v /= samples as f64;
        }
        let mut std = vec![0.0; m];
        for csi in &batch {
            for (i, &h) in csi.h.iter().enumerate() {
                std[i] += (csi_feature(h) - mean[i]).powi(2);
            }
        }
        for v in &mut std {
            *v = (*v / samples as f64).sqrt();
            if *v < 1e-12 {
                *v = 1.0;
            }
        }
        InputNorm { mean, std }
    }

    pub fn normalize(&self, carrier: usize, h: f64) -> f64 {
        (csi_feature(h) - self.mean[carrier]) / self.std[carrier]
    }
}

// ---------------------------------------------------------------------------
// Policy parameters
// ---------------------------------------------------------------------------

/// All learnable state of the PDDL policy: one MLP per carrier (shared
/// architecture), the σ/μ squashing head, and the frozen input statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub spec: MlpSpec,
    pub nets: Vec<MlpParams>,
    pub head: PolicyHead,
    pub p_s: f64,
    pub norm: InputNorm,
}

/// Everything retained about one carrier's policy draw that the gradient
/// needs: the forward cache, the raw network outputs, the induced truncated
/// Gaussian, and the sampled power.
#[derive(Debug, Clone)]
pub struct CarrierDraw {
    pub cache: ForwardCache,
    pub raw: [f64; 2],
    pub dist: TruncatedGaussian,
    pub p: f64,
}

/// One batch of policy draws: `samples[j][i]` is carrier `i` of CSI draw `j`.
#[derive(Debug, Clone)]
pub struct BatchDraws {
    pub samples: Vec<Vec<CarrierDraw>>,
}

impl BatchDraws {
    /// The sampled powers of batch element `j` as an allocation vector.
    pub fn allocation(&self, j: usize) -> PowerAllocation {
        PowerAllocation::new(self.samples[j].iter().map(|d| d.p).collect())
    }
}

impl PolicyParams {
    /// He-initialized networks for `m` carriers.
    pub fn init<R: Rng + ?Sized>(
        m: usize,
        cfg: &PddlConfig,
        p_s: f64,
        norm: InputNorm,
        rng: &mut R,
    ) -> Result<Self, PddlError> {
        if m == 0 {
            return Err(PddlError::InvalidConfig {
                message: "need at least one carrier".into(),
            });
        }
        if !(p_s.is_finite() && p_s > 0.0) {
            return Err(PddlError::InvalidConfig {
                message: format!("p_s must be positive, got {p_s}"),
            });
        }
        if norm.mean.len() != m || norm.std.len() != m {
            return Err(PddlError::InvalidConfig {
                message: format!(
                    "normalization covers {} carriers, policy needs {m}",
                    norm.mean.len()
                ),
            });
        }
        let spec = cfg.mlp_spec()?;
        let head = PolicyHead::new(cfg.sigma_min_frac * p_s, cfg.sigma_max_frac * p_s)?;
        let nets = (0..m).map(|_| mlp::init(&spec, rng)).collect();
        Ok(PolicyParams {
            spec,
            nets,
            head,
            p_s,
            norm,
        })
    }

    /// Number of carriers.
    pub fn m(&self) -> usize {
        self.nets.len()
    }

    fn check_carrier(&self, index: usize) -> Result<(), PddlError> {
        if index >= self.m() {
            return Err(PddlError::CarrierOutOfRange {
                index,
                m: self.m(),
            });
        }
        Ok(())
    }

    fn check_csi(&self, csi: &CsiVector) -> Result<(), PddlError> {
        if csi.len() != self.m() {
            return Err(PddlError::InvalidConfig {
                message: format!("CSI has {} carriers, policy has {}", csi.len(), self.m()),
            });
        }
        Ok(())
    }

    /// Forward pass of carrier `i` on gain `h`, keeping what backprop needs.
    fn forward_carrier(
        &self,
        i: usize,
        h: f64,
    ) -> Result<(ForwardCache, [f64; 2], TruncatedGaussian), PddlError> {
        self.check_carrier(i)?;
        let x = self.norm.normalize(i, h);
        let (out, cache) = mlp::forward(&self.spec, &self.nets[i], &[x])?;
        let raw = [out[0], out[1]];
        let dist = from_network_outputs(raw, self.p_s, &self.head)?;
        Ok((cache, raw, dist))
    }

    /// The power distribution carrier `i` would use at gain `h`.
    pub fn distribution(&self, i: usize, h: f64) -> Result<TruncatedGaussian, PddlError> {
        Ok(self.forward_carrier(i, h)?.2)
    }

    /// Deterministic evaluation policy: each carrier transmits the mean of
    /// its truncated-Gaussian power distribution.
    pub fn mean_allocation(&self, csi: &CsiVector) -> Result<PowerAllocation, PddlError> {
        self.check_csi(csi)?;
        let mut p = Vec::with_capacity(self.m());
        for (i, &h) in csi.h.iter().enumerate() {
            p.push(self.distribution(i, h)?.mean());
        }
        Ok(PowerAllocation::new(p))
    }

    /// Draws stochastic allocations for a whole CSI batch, retaining the
    /// per-carrier material the REINFORCE gradient needs.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        batch: &[CsiVector],
        rng: &mut R,
    ) -> Result<BatchDraws, PddlError> {
        let mut samples = Vec::with_capacity(batch.len());
        for csi in batch {
            self.check_csi(csi)?;
            let mut carriers = Vec::with_capacity(self.m());
            for (i, &h) in csi.h.iter().enumerate() {
                let (cache, raw, dist) = self.forward_carrier(i, h)?;
                let p = dist.sample(rng);
                carriers.push(CarrierDraw {
                    cache,
                    raw,
                    dist,
                    p,
                });
            }
            samples.push(carriers);
        }
        Ok(BatchDraws { samples })
    }

    // -- checkpointing ------------------------------------------------------

    /// Writes the full policy (head, normalization, every network) as a
    /// plain-text checkpoint whose floats round-trip bit-exactly.
    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<(), PddlError> {
        writeln!(out, "{POLICY_MAGIC}")?;
        writeln!(out, "carriers {}", self.m())?;
        writeln!(out, "p_s {}", self.p_s)?;
        writeln!(out, "sigma_min {}", self.head.sigma_min)?;
        writeln!(out, "sigma_max {}", self.head.sigma_max)?;
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        writeln!(out, "norm_mean {}", join(&self.norm.mean))?;
        writeln!(out, "norm_std {}", join(&self.norm.std))?;
        for net in &self.nets {
            mlp::write_checkpoint(out, &self.spec, net)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: &mut R) -> Result<Self, PddlError> {
        let bad = |message: String| PddlError::Checkpoint { message };
        let mut line = String::new();
        let mut next_line = |input: &mut R, what: &str| -> Result<String, PddlError> {
            line.clear();
            let n = input.read_line(&mut line)?;
            if n == 0 {
                return Err(bad(format!("unexpected end of file, expected {what}")));
            }
            Ok(line.trim_end_matches(['\n', '\r']).to_string())
        };
        let magic = next_line(input, "magic header")?;
        if magic != POLICY_MAGIC {
            return Err(bad(format!("bad magic {magic:?}, expected {POLICY_MAGIC:?}")));
        }
        let mut field = |input: &mut R, key: &str| -> Result<String, PddlError> {
            let text = next_line(input, key)?;
            text.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("expected `{key} ...`, got {text:?}")))
        };
        let m: usize = field(input, "carriers")?
            .parse()
            .map_err(|e| bad(format!("carriers: {e}")))?;
        if m == 0 {
            return Err(bad("checkpoint declares zero carriers".into()));
        }
        let scalar = |text: String, key: &str| -> Result<f64, PddlError> {
            text.parse()
                .map_err(|e| bad(format!("{key}: {e}")))
        };
        let p_s = scalar(field(input, "p_s")?, "p_s")?;
        let sigma_min = scalar(field(input, "sigma_min")?, "sigma_min")?;
        let sigma_max = scalar(field(input, "sigma_max")?, "sigma_max")?;
        let vector = |text: String, key: &str| -> Result<Vec<f64>, PddlError> {
            let v: Result<Vec<f64>, _> = text.split(' ').map(str::parse).collect();
            let v = v.map_err(|e| bad(format!("{key}: {e}")))?;
            if v.len() != m {
                return Err(bad(format!("{key} has {} entries, expected {m}", v.len())));
            }
            Ok(v)
        };
        let mean = vector(field(input, "norm_mean")?, "norm_mean")?;
        let std = vector(field(input, "norm_std")?, "norm_std")?;

        let mut nets = Vec::with_capacity(m);
        let mut spec: Option<MlpSpec> = None;
        for i in 0..m {
            let (net_spec, params) = mlp::read_checkpoint(input)
                .map_err(|e| bad(format!("net {i}: {e}")))?;
            match &spec {
                None => spec = Some(net_spec),
                Some(s) if *s == net_spec => {}
                Some(_) => {
                    return Err(bad(format!("net {i} has a different architecture")));
                }
            }
            nets.push(params);
        }
        let params = PolicyParams {
            spec: spec.expect("m ≥ 1"),
            nets,
            head: PolicyHead::new(sigma_min, sigma_max)?,
            p_s,
            norm: InputNorm { mean, std },
        };
        if !(params.p_s.is_finite() && params.p_s > 0.0) {
            return Err(bad(format!("p_s must be positive, got {}", params.p_s)));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<(), PddlError> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PddlError> {
        let mut input = BufReader::new(File::open(path)?);
        PolicyParams::read_from(&mut input)
    }
}

// ---------------------------------------------------------------------------
// Gradient and updates
// ---------------------------------------------------------------------------

/// Side counts from a gradient evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GradStats {
    /// Draws whose truncated Gaussian had underflowed mass; their score is
    /// undefined and they contribute zero to the gradient.
    pub degenerate_draws: u64,
}

/// REINFORCE estimate of `∇_θ E[L]` from one sampled batch:
/// `(1/S) Σ_j weight_j · ∇_θ log π(P_j)`, with `weight_j` the (optionally
/// baselined) Lagrangian `L̃_j`. Returns one flat gradient per carrier net.
pub fn policy_gradient(
    params: &PolicyParams,
    draws: &BatchDraws,
    weights: &[f64],
) -> Result<(Vec<Vec<f64>>, GradStats), PddlError> {
    if draws.samples.len() != weights.len() {
        return Err(PddlError::InvalidConfig {
            message: format!(
                "{} Lagrangian weights for {} batch draws",
                weights.len(),
                draws.samples.len()
            ),
        });
    }
    if draws.samples.is_empty() {
        return Err(PddlError::InvalidConfig {
            message: "policy gradient needs a nonempty batch".into(),
        });
    }
    let mut grads: Vec<Vec<f64>> = (0..params.m())
        .map(|_| vec![0.0; params.spec.param_count()])
        .collect();
    let mut stats = GradStats::default();
    let s = draws.samples.len() as f64;
    for (carriers, &l_tilde) in draws.samples.iter().zip(weights) {
        if carriers.len() != params.m() {
            return Err(PddlError::InvalidConfig {
                message: format!(
                    "batch draw covers {} carriers, policy has {}",
                    carriers.len(),
                    params.m()
                ),
            });
        }
        for (i, draw) in carriers.iter().enumerate() {
            if draw.dist.mass_underflows() {
                stats.degenerate_draws += 1;
                continue;
            }
            let (d_mu, d_sigma) = draw.dist.grad_log_pdf(draw.p)?;
            let jac = head_jacobian(draw.raw, params.p_s, &params.head);
            let out_grad = [d_mu * jac[0], d_sigma * jac[1]];
            let g = mlp::backward(&params.spec, &params.nets[i], &draw.cache, &out_grad)?;
            for (acc, gt) in grads[i].iter_mut().zip(&g) {
                *acc += l_tilde * gt / s;
            }
        }
    }
    Ok((grads, stats))
}

/// Gradient-ascent step `θ_i ← θ_i + δ·g_i` for every carrier net. If any
/// updated parameter is non-finite the step is retried with a halved δ (up
/// to 10 times) before failing. Returns the number of halvings used.
pub fn primal_update(
    params: &mut PolicyParams,
    grads: &[Vec<f64>],
    delta: f64,
    iteration: u64,
) -> Result<u32, PddlError> {
    if grads.len() != params.m() {
        return Err(PddlError::InvalidConfig {
            message: format!("{} gradients for {} networks", grads.len(), params.m()),
        });
    }
    let mut step = delta;
    for halvings in 0..=10u32 {
        let updated: Vec<Vec<f64>> = params
            .nets
            .iter()
            .zip(grads)
            .map(|(net, g)| {
                net.theta
                    .iter()
                    .zip(g)
                    .map(|(t, gt)| t + step * gt)
                    .collect()
            })
            .collect();
        if updated
            .iter()
            .all(|theta| theta.iter().all(|v| v.is_finite()))
        {
            for (net, theta) in params.nets.iter_mut().zip(updated) {
                net.theta = theta;
            }
            return Ok(halvings);
        }
        step *= 0.5;
    }
    Err(PddlError::NonFiniteUpdate {
        iteration,
        halvings: 10,
    })
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// One training-trajectory row (batch estimates, pre-update state).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub iteration: u64,
    pub lambda: f64,
    /// Batch estimate of `E[Σ ω_i C_i]` under the stochastic policy.
    pub objective: f64,
    /// Batch estimate of the budget slack `P_T - E[Σ P_i]`.
    pub slack: f64,
    /// Mean policy σ across the batch and carriers (exploration level).
    pub mean_sigma: f64,
    /// ℓ₂ norm of the stacked REINFORCE gradient.
    pub grad_norm: f64,
}

/// Side counts accumulated over a whole run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunDiagnostics {
    pub degenerate_draws: u64,
    pub delta_halvings: u64,
}

/// Full solver output.
#[derive(Debug, Clone)]
pub struct PddlOutput {
    pub records: Vec<TrainRecord>,
    /// Held-out evaluations of the deterministic (mean) policy.
    pub eval: Vec<IterationRecord>,
    pub final_lambda: f64,
    pub params: PolicyParams,
    pub diagnostics: RunDiagnostics,
}

/// Trains the policy. Per iteration: draw `S` CSI vectors and one power
/// sample per carrier, fetch capacities through `oracle` (exactly `S` oracle
/// calls covering `S·m` carrier evaluations — the trainer itself never
/// touches the CNR model), form the Lagrangians at the current `λ`, take a
/// REINFORCE ascent step on the networks and a projected descent step on λ.
///
/// `init_rng` drives network initialization; `train_rng` drives warmup,
/// CSI draws and policy sampling. Splitting them keeps the CSI sequence
/// comparable across architectures.
#[allow(clippy::too_many_arguments)]
pub fn run<R: Rng + ?Sized>(
    cfg: &PddlConfig,
    chan: &ChannelParams,
    weights: &Weights,
    p_t: f64,
    p_s: f64,
    oracle: &dyn CapacityOracle,
    init_rng: &mut R,
    train_rng: &mut R,
    eval: Option<&EvalSchedule>,
) -> Result<PddlOutput, PddlError> {
    cfg.validate()?;
    chan.validate()?;
    let m = chan.m();
    if weights.len() != m {
        return Err(CapacityError::LengthMismatch {
            powers: m,
            csi: m,
            weights: weights.len(),
        }
        .into());
    }
    if !(p_t > 0.0 && p_s > 0.0) {
        return Err(PddlError::InvalidConfig {
            message: format!("p_t and p_s must be positive, got {p_t} and {p_s}"),
        });
    }

    let norm = InputNorm::from_warmup(chan, cfg.warmup_batches * cfg.batch_size, train_rng);
    let mut params = PolicyParams::init(m, cfg, p_s, norm, init_rng)?;

    let mut state = DualState {
        lambda: cfg.lambda0,
    };
    let mut records = Vec::with_capacity(cfg.iterations as usize);
    let mut eval_records = Vec::new();
    let mut diagnostics = RunDiagnostics::default();
    // Running mean of past batch-mean Lagrangians (variance reduction).
    let mut baseline = 0.0;
    let mut baseline_batches = 0u64;

    for k in 0..cfg.iterations {
        let batch = chan.sample_csi(train_rng, cfg.batch_size);
        let draws = params.sample_batch(&batch, train_rng)?;

        let mut lagrangians = Vec::with_capacity(cfg.batch_size);
        let mut allocations = Vec::with_capacity(cfg.batch_size);
        let mut objective = 0.0;
        for (j, csi) in batch.iter().enumerate() {
            let alloc = draws.allocation(j);
            let caps = oracle.capacities(&alloc, csi)?;
            if caps.len() != m {
                return Err(PddlError::OracleShape {
                    got: caps.len(),
                    want: m,
                });
            }
            let value: f64 = weights.w.iter().zip(&caps).map(|(w, c)| w * c).sum();
            objective += value;
            lagrangians.push(value + state.lambda * (p_t - alloc.total()));
            allocations.push(alloc);
        }
        objective /= cfg.batch_size as f64;
        let mean_total = allocations.iter().map(PowerAllocation::total).sum::<f64>()
            / cfg.batch_size as f64;
        let batch_mean_l =
            lagrangians.iter().sum::<f64>() / cfg.batch_size as f64;

        let grad_weights: Vec<f64> = if cfg.variance_reduction {
            lagrangians.iter().map(|l| l - baseline).collect()
        } else {
            lagrangians.clone()
        };
        let (grads, stats) = policy_gradient(&params, &draws, &grad_weights)?;
        diagnostics.degenerate_draws += stats.degenerate_draws;

        let mean_sigma = draws
            .samples
            .iter()
            .flat_map(|c| c.iter().map(|d| d.dist.sigma))
            .sum::<f64>()
            / (cfg.batch_size * m) as f64;
        let grad_norm = grads
            .iter()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();

        records.push(TrainRecord {
            iteration: k,
            lambda: state.lambda,
            objective,
            slack: p_t - mean_total,
            mean_sigma,
            grad_norm,
        });

        let delta_k = step_size(cfg.delta, cfg.delta_schedule, k);
        diagnostics.delta_halvings +=
            u64::from(primal_update(&mut params, &grads, delta_k, k)?);

        let eta_k = step_size(cfg.eta, cfg.eta_schedule, k);
        state = dual_step(state, &allocations, p_t, eta_k).map_err(|e| {
            PddlError::InvalidConfig {
                message: e.to_string(),
            }
        })?;

        // The baseline only ever uses *past* batches, so it is independent
        // of the draws it weights and leaves the estimator unbiased.
        if cfg.variance_reduction {
            baseline_batches += 1;
            baseline += (batch_mean_l - baseline) / baseline_batches as f64;
        }

        if let Some(schedule) = eval {
            if schedule.due(k + 1, cfg.iterations) {
                let (obj, slack) = schedule
                    .evaluator
                    .score(|csi| params.mean_allocation(csi).map_err(|e| e.to_string()))
                    .map_err(|message| PddlError::Eval { message })?;
                eval_records.push(IterationRecord {
                    iteration: k + 1,
                    lambda: state.lambda,
                    objective: obj,
                    slack,
                });
            }
        }
    }

    Ok(PddlOutput {
        records,
        eval: eval_records,
        final_lambda: state.lambda,
        params,
        diagnostics,
    })
}
