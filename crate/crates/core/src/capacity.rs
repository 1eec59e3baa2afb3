//! Per-carrier CNR and capacity at the APD-based RoFSO receiver, plus the
//! oracle abstraction the model-free solver trains against.
//!
//! With transmit power `p`, CSI value `h` and received-power proxy
//! `I = r·p·h`, the carrier-to-noise ratio is
//!
//! ```text
//!            (1/2) (OMI · m_p · I)²
//! CNR = ───────────────────────────────────────
//!        RIN·I² + 2 e m_p^(2+F) I + 4 k T / R_f
//! ```
//!
//! i.e. subcarrier signal power over relative-intensity, shot and thermal
//! noise. Capacity is reported in nats as `ln(1 + CNR)`. As `p·h → ∞` the
//! RIN term dominates and CNR saturates at the ceiling `(OMI·m_p)²/(2·RIN)`;
//! at the other end CNR vanishes quadratically, which makes the capacity
//! curve S-shaped (convex near zero, then concave) — the reason the solvers
//! cannot rely on concavity and scan for per-channel maxima globally.

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::channel::CsiVector;

/// Errors from capacity evaluation over vectors.
#[derive(Debug, Error, PartialEq)]
pub enum CapacityError {
    #[error("length mismatch: powers {powers}, csi {csi}, weights {weights}")]
    LengthMismatch {
        powers: usize,
        csi: usize,
        weights: usize,
    },
    #[error("power {value} at index {index} outside [0, {p_max}]")]
    PowerOutOfRange {
        index: usize,
        value: f64,
        p_max: f64,
    },
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
}

/// Errors an oracle may surface; analytic oracles only fail on shape, but a
/// hardware- or table-backed oracle can report backend trouble.
#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Capacity(#[from] CapacityError),
    #[error("oracle backend failure: {0}")]
    Backend(String),
}

/// Receiver and noise parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    /// Optical modulation index per subcarrier.
    pub omi: f64,
    /// APD multiplication factor `m_p`.
    pub m_p: f64,
    /// Photodiode responsivity `r` (A/W).
    pub responsivity: f64,
    /// Relative intensity noise, linear and already integrated over the
    /// receiver bandwidth (use [`SystemParams::rin_linear`] for dB/Hz input).
    pub rin: f64,
    /// Elementary charge (C).
    pub e_charge: f64,
    /// APD excess noise exponent `F` in `m_p^(2+F)`.
    pub f_excess: f64,
    /// Boltzmann constant (J/K).
    pub k_boltz: f64,
    /// Receiver temperature (K).
    pub temperature: f64,
    /// Load resistance (Ω).
    pub r_f: f64,
}

impl Default for SystemParams {
    /// Reference receiver: OMI 0.15, gain 5, responsivity 0.8, RIN −140
    /// dB/Hz over 1 GHz, excess noise exponent 0.7, 300 K into 50 Ω.
    fn default() -> Self {
        SystemParams {
            omi: 0.15,
            m_p: 5.0,
            responsivity: 0.8,
            rin: SystemParams::rin_linear(-140.0, 1e9),
            e_charge: 1.602e-19,
            f_excess: 0.7,
            k_boltz: 1.381e-23,
            temperature: 300.0,
            r_f: 50.0,
        }
    }
}

impl SystemParams {
    /// Integrated linear RIN from a dB/Hz figure and a bandwidth in Hz.
    pub fn rin_linear(rin_db_hz: f64, bandwidth_hz: f64) -> f64 {
        10f64.powf(rin_db_hz / 10.0) * bandwidth_hz
    }

    /// Checks that every parameter is positive and finite (OMI additionally
    /// at most 1).
    pub fn validate(&self) -> Result<(), CapacityError> {
        let fields = [
            ("omi", self.omi),
            ("m_p", self.m_p),
            ("responsivity", self.responsivity),
            ("rin", self.rin),
            ("e_charge", self.e_charge),
            ("k_boltz", self.k_boltz),
            ("temperature", self.temperature),
            ("r_f", self.r_f),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(CapacityError::NonPositive { name, value });
            }
        }
        if !(self.f_excess.is_finite() && self.f_excess >= 0.0) {
            return Err(CapacityError::NonPositive {
                name: "f_excess",
                value: self.f_excess,
            });
        }
        if self.omi > 1.0 {
            return Err(CapacityError::NonPositive {
                name: "omi (must be ≤ 1)",
                value: self.omi,
            });
        }
        Ok(())
    }

    /// Thermal noise power `4 k T / R_f`.
    pub fn thermal_noise(&self) -> f64 {
        4.0 * self.k_boltz * self.temperature / self.r_f
    }

    /// The RIN-limited CNR ceiling `(OMI · m_p)² / (2 · RIN)`.
    pub fn cnr_ceiling(&self) -> f64 {
        0.5 * (self.omi * self.m_p).powi(2) / self.rin
    }
}

/// Carrier-to-noise ratio for transmit power `p` and CSI value `h`.
pub fn cnr(p: f64, h: f64, sys: &SystemParams) -> f64 {
    debug_assert!(p >= 0.0 && h >= 0.0, "cnr expects nonnegative p, h");
    let i = sys.responsivity * p * h;
    let signal = 0.5 * (sys.omi * sys.m_p * i).powi(2);
    let noise = sys.rin * i * i
        + 2.0 * sys.e_charge * sys.m_p.powf(2.0 + sys.f_excess) * i
        + sys.thermal_noise();
    signal / noise
}

/// Per-carrier capacity `ln(1 + CNR(p, h))` in nats.
pub fn capacity(p: f64, h: f64, sys: &SystemParams) -> f64 {
    cnr(p, h, sys).ln_1p()
}

/// A power allocation across the `m` carriers, in watts.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub p: Vec<f64>,
}

impl PowerAllocation {
    pub fn new(p: Vec<f64>) -> Self {
        PowerAllocation { p }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Total transmit power `Σ_i p_i`.
    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }

    /// Verifies `0 ≤ p_i ≤ p_max` for every carrier.
    pub fn check_bounds(&self, p_max: f64) -> Result<(), CapacityError> {
        for (index, &value) in self.p.iter().enumerate() {
            if !(value >= 0.0 && value <= p_max) {
                return Err(CapacityError::PowerOutOfRange {
                    index,
                    value,
                    p_max,
                });
            }
        }
        Ok(())
    }
}

/// Nonnegative per-carrier priority weights ω.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub w: Vec<f64>,
}

impl Weights {
    pub fn new(w: Vec<f64>) -> Result<Self, CapacityError> {
        for (index, &value) in w.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(CapacityError::PowerOutOfRange {
                    index,
                    value,
                    p_max: f64::INFINITY,
                });
            }
        }
        Ok(Weights { w })
    }

    /// `m` weights drawn i.i.d. uniform on [0, 1).
    pub fn random_uniform<R: rand::Rng + ?Sized>(m: usize, rng: &mut R) -> Self {
        Weights {
            w: (0..m).map(|_| rng.random::<f64>()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Weighted sum utility `Σ_i ω_i · ln(1 + CNR(p_i, h_i))`.
pub fn weighted_sum_capacity(
    alloc: &PowerAllocation,
    csi: &CsiVector,
    weights: &Weights,
    sys: &SystemParams,
) -> Result<f64, CapacityError> {
    if alloc.len() != csi.len() || alloc.len() != weights.len() {
        return Err(CapacityError::LengthMismatch {
            powers: alloc.len(),
            csi: csi.len(),
            weights: weights.len(),
        });
    }
    Ok(alloc
        .p
        .iter()
        .zip(&csi.h)
        .zip(&weights.w)
        .map(|((&p, &h), &w)| w * capacity(p, h, sys))
        .sum())
}

// ---------------------------------------------------------------------------
// Capacity oracle
// ---------------------------------------------------------------------------

/// Black-box access to per-carrier capacities.
///
/// The model-free solver sees the system *only* through this trait: it sends
/// an allocation and a CSI vector, and receives `m` capacity samples back.
/// Implementations may be analytic, table-driven, or measurement-backed.
pub trait CapacityOracle {
    /// Capacity of each carrier under `alloc` at state `csi`, in nats.
    fn capacities(&self, alloc: &PowerAllocation, csi: &CsiVector) -> Result<Vec<f64>, OracleError>;
}

/// The analytic CNR-formula oracle. Counts per-carrier evaluations so tests
/// and benchmarks can audit exactly how often the closed-form expression was
/// consulted.
#[derive(Debug)]
pub struct AnalyticOracle {
    sys: SystemParams,
    evals: AtomicU64,
}

impl AnalyticOracle {
    pub fn new(sys: SystemParams) -> Self {
        AnalyticOracle {
            sys,
            evals: AtomicU64::new(0),
        }
    }

    pub fn system(&self) -> &SystemParams {
        &self.sys
    }

    /// Number of per-carrier capacity evaluations served so far.
    pub fn eval_count(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }
}

impl CapacityOracle for AnalyticOracle {
    fn capacities(&self, alloc: &PowerAllocation, csi: &CsiVector) -> Result<Vec<f64>, OracleError> {
        if alloc.len() != csi.len() {
            return Err(CapacityError::LengthMismatch {
                powers: alloc.len(),
                csi: csi.len(),
                weights: alloc.len(),
            }
            .into());
        }
        self.evals.fetch_add(alloc.len() as u64, Ordering::Relaxed);
        Ok(alloc
            .p
            .iter()
            .zip(&csi.h)
            .map(|(&p, &h)| capacity(p, h, &self.sys))
            .collect())
    }
}
