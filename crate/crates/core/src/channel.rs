//! Free-space optical channel model: deterministic geometric/atmospheric
//! attenuation plus log-normal scintillation, and i.i.d. CSI sampling.
//!
//! Each WDM carrier at wavelength `λ_i` sees the link gain
//!
//! ```text
//! h_a(λ_i) = (A_tx · A_rx) / (d · λ_i)² · e^(-α d)
//! ```
//!
//! with aperture areas `A = π (D/2)²`, link length `d` and attenuation
//! coefficient `α`. Turbulence multiplies the field by a unit-mean log-normal
//! factor `h_t = e^z`, `z ~ N(-σ_x²/2, σ_x²)`, drawn independently per
//! carrier and per channel use. The channel-state information fed to the
//! allocator is the squared composite gain over the noise normalizer:
//!
//! ```text
//! h_i = |h_a(λ_i) · h_t,i|² / n0
//! ```
//!
//! Note that the far-field gain formula is applied literally: for short links
//! with large apertures it can exceed one (the reference geometry gives
//! `h_a ≈ 6.42`). Set [`ChannelParams::clamp_gain_to_unity`] to cap it.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum spectral spacing between adjacent carriers (meters): 5 nm.
pub const DEFAULT_GUARD_BAND: f64 = 5e-9;

/// Errors raised by channel construction and sampling.
#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("at least one wavelength is required")]
    EmptyWavelengths,
    #[error("wavelengths must be strictly increasing (violated at index {index})")]
    NonIncreasingWavelengths { index: usize },
    #[error(
        "carrier spacing {spacing:e} m at index {index} is below the guard band {guard_band:e} m"
    )]
    GuardBandViolation {
        index: usize,
        spacing: f64,
        guard_band: f64,
    },
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} must be nonnegative and finite, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("carrier index {index} out of range for {m} channels")]
    IndexOutOfRange { index: usize, m: usize },
}

/// Static description of the FSO link and its fading statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Carrier wavelengths in meters, strictly increasing.
    pub wavelengths: Vec<f64>,
    /// Atmospheric attenuation coefficient (1/m).
    pub alpha: f64,
    /// Link length (m).
    pub distance: f64,
    /// Transmit aperture diameter (m).
    pub d_tx: f64,
    /// Receive aperture diameter (m).
    pub d_rx: f64,
    /// Log-amplitude variance σ_x² of the scintillation; 0 disables fading.
    pub sigma_x2: f64,
    /// Noise normalizer n0 applied to the squared gain.
    pub n0: f64,
    /// Cap the deterministic gain at 1 (off by default; the far-field
    /// formula is otherwise applied literally even when it exceeds unity).
    pub clamp_gain_to_unity: bool,
    /// Minimum carrier spacing enforced at construction (m).
    pub guard_band: f64,
}

/// One channel-state draw: the per-carrier CSI values `h_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiVector {
    pub h: Vec<f64>,
}

impl CsiVector {
    /// Number of carriers.
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<(), ChannelError> {
    if !(value.is_finite() && value > 0.0) {
        return Err(ChannelError::NonPositive { name, value });
    }
    Ok(())
}

fn check_nonnegative(name: &'static str, value: f64) -> Result<(), ChannelError> {
    if !(value.is_finite() && value >= 0.0) {
        return Err(ChannelError::Negative { name, value });
    }
    Ok(())
}

impl ChannelParams {
    /// Validated constructor; the guard band defaults to 5 nm and gain
    /// clamping is off.
    pub fn new(
        wavelengths: Vec<f64>,
        alpha: f64,
        distance: f64,
        d_tx: f64,
        d_rx: f64,
        sigma_x2: f64,
        n0: f64,
    ) -> Result<Self, ChannelError> {
        let params = ChannelParams {
            wavelengths,
            alpha,
            distance,
            d_tx,
            d_rx,
            sigma_x2,
            n0,
            clamp_gain_to_unity: false,
            guard_band: DEFAULT_GUARD_BAND,
        };
        params.validate()?;
        Ok(params)
    }

    /// `m` carriers on a uniform grid starting at `start` with spacing `step`.
    pub fn wavelength_grid(m: usize, start: f64, step: f64) -> Vec<f64> {
        (0..m).map(|i| start + step * i as f64).collect()
    }

    /// Re-checks every construction invariant (useful after field edits).
    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.wavelengths.is_empty() {
            return Err(ChannelError::EmptyWavelengths);
        }
        for (index, w) in self.wavelengths.iter().enumerate() {
            check_positive("wavelength", *w)?;
            if index > 0 {
                let spacing = w - self.wavelengths[index - 1];
                if spacing <= 0.0 {
                    return Err(ChannelError::NonIncreasingWavelengths { index });
                }
                // Tolerate float noise from grid construction (start + k·step).
                if spacing < self.guard_band * (1.0 - 1e-9) {
                    return Err(ChannelError::GuardBandViolation {
                        index,
                        spacing,
                        guard_band: self.guard_band,
                    });
                }
            }
        }
        check_nonnegative("alpha", self.alpha)?;
        check_positive("distance", self.distance)?;
        check_positive("d_tx", self.d_tx)?;
        check_positive("d_rx", self.d_rx)?;
        check_nonnegative("sigma_x2", self.sigma_x2)?;
        check_positive("n0", self.n0)?;
        check_nonnegative("guard_band", self.guard_band)?;
        Ok(())
    }

    /// Number of WDM carriers.
    pub fn m(&self) -> usize {
        self.wavelengths.len()
    }

    /// Deterministic attenuation gain `h_a(λ_i)`.
    pub fn attenuation_gain(&self, index: usize) -> Result<f64, ChannelError> {
        let m = self.m();
        let lambda = *self
            .wavelengths
            .get(index)
            .ok_or(ChannelError::IndexOutOfRange { index, m })?;
        let a_tx = std::f64::consts::PI * (self.d_tx / 2.0).powi(2);
        let a_rx = std::f64::consts::PI * (self.d_rx / 2.0).powi(2);
        let gain = a_tx * a_rx / (self.distance * lambda).powi(2)
            * (-self.alpha * self.distance).exp();
        Ok(if self.clamp_gain_to_unity {
            gain.min(1.0)
        } else {
            gain
        })
    }

    /// One unit-mean log-normal turbulence draw `h_t = e^z`,
    /// `z ~ N(-σ_x²/2, σ_x²)`. With `sigma_x2 = 0` this returns exactly 1
    /// without consuming randomness.
    pub fn sample_turbulence<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sigma_x2 == 0.0 {
            return 1.0;
        }
        let sigma = self.sigma_x2.sqrt();
        let z: f64 = -0.5 * self.sigma_x2 + sigma * rng.sample::<f64, _>(StandardNormal);
        z.exp()
    }

    /// `count` i.i.d. CSI vectors. Within each vector the turbulence draws
    /// are independent across carriers and consumed in carrier order, which
    /// fixes the rng stream layout for reproducibility.
    pub fn sample_csi<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<CsiVector> {
        let gains: Vec<f64> = (0..self.m())
            .map(|i| self.attenuation_gain(i).expect("index in range"))
            .collect();
        (0..count)
            .map(|_| {
                let h = gains
                    .iter()
                    .map(|&g| {
                        let composite = g * self.sample_turbulence(rng);
                        composite * composite / self.n0
                    })
                    .collect();
                CsiVector { h }
            })
            .collect()
    }
}
