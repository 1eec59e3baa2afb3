//! Truncated-Gaussian transmit-power policies and the network output head.
//!
//! Each carrier's stochastic policy is a Gaussian `N(μ, σ²)` truncated to the
//! admissible power interval `[0, p_s]`. Its density, for `x` in support and
//! standardized bounds `α = (lower-μ)/σ`, `β = (upper-μ)/σ`, is
//!
//! ```text
//! π(x) = φ((x-μ)/σ) / (σ·Z),    Z = Φ(β) - Φ(α)
//! ```
//!
//! The score functions that drive the policy-gradient estimator are
//!
//! ```text
//! ∂ ln π/∂μ = z/σ + (φ(β) - φ(α)) / (σ Z)
//! ∂ ln π/∂σ = (z² - 1)/σ + (β φ(β) - α φ(α)) / (σ Z)
//! ```
//!
//! with `z = (x-μ)/σ`. `Z` is evaluated in whichever tail keeps relative
//! precision, so densities stay usable down to `Z ≈ 1e-12` and beyond;
//! sampling is by CDF inversion, which maps the generator's uniforms through
//! the same stable machinery.
//!
//! A [`PolicyHead`] turns a network's two raw outputs into `(μ, σ)` via
//! logistic squashing: `μ = p_s·s(raw₀)` and `σ` affinely between its
//! configured floor and ceiling. The floor keeps the score functions
//! bounded; the ceiling keeps exploration from drowning the budget signal.

use rand::Rng;
use thiserror::Error;

use crate::math::{
    log_normal_cdf, log_normal_sf, normal_cdf, normal_pdf, normal_quantile, normal_sf,
    LN_SQRT_2PI,
};

/// Errors from policy construction and density evaluation.
#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("invalid truncated Gaussian: mu={mu}, sigma={sigma}, bounds=[{lower}, {upper}]")]
    InvalidParams {
        mu: f64,
        sigma: f64,
        lower: f64,
        upper: f64,
    },
    #[error("x = {x} outside the support [{lower}, {upper}]")]
    OutOfSupport { x: f64, lower: f64, upper: f64 },
    #[error("truncation mass underflowed for mu={mu}, sigma={sigma}")]
    DegenerateMass { mu: f64, sigma: f64 },
    #[error("network head received non-finite raw output {value}")]
    NonFiniteRaw { value: f64 },
    #[error("invalid head bounds: sigma_min={sigma_min}, sigma_max={sigma_max}")]
    InvalidHead { sigma_min: f64, sigma_max: f64 },
}

/// A Gaussian truncated to `[lower, upper]`. The location `μ` may lie
/// outside the support; only `σ > 0` and a nonempty interval are required.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedGaussian {
    pub mu: f64,
    pub sigma: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedGaussian {
    pub fn new(mu: f64, sigma: f64, lower: f64, upper: f64) -> Result<Self, PolicyError> {
        if !(mu.is_finite()
            && sigma.is_finite()
            && sigma > 0.0
            && lower.is_finite()
            && upper.is_finite()
            && lower < upper)
        {
            return Err(PolicyError::InvalidParams {
                mu,
                sigma,
                lower,
                upper,
            });
        }
        Ok(TruncatedGaussian {
            mu,
            sigma,
            lower,
            upper,
        })
    }

    /// Standardized bounds `(α, β)`.
    fn bounds_std(&self) -> (f64, f64) {
        (
            (self.lower - self.mu) / self.sigma,
            (self.upper - self.mu) / self.sigma,
        )
    }

    /// Truncation mass `Z = Φ(β) - Φ(α)`, evaluated in the tail that keeps
    /// relative precision. Underflows to 0 only when both bounds are ≳ 38σ
    /// from μ on the same side.
    pub fn mass(&self) -> f64 {
        let (a, b) = self.bounds_std();
        if a > 0.0 {
            // Both bounds in the upper tail: survival form avoids 1 - 1.
            normal_sf(a) - normal_sf(b)
        } else {
            // Lower-tail or straddling interval: the CDF form is exact.
            normal_cdf(b) - normal_cdf(a)
        }
    }

    /// `ln Z`, with a log-domain fallback when [`mass`](Self::mass)
    /// underflows.
    pub fn ln_mass(&self) -> f64 {
        let z = self.mass();
        if z > 0.0 {
            return z.ln();
        }
        let (a, b) = self.bounds_std();
        if a > 0.0 {
            let (la, lb) = (log_normal_sf(a), log_normal_sf(b));
            la + (-((lb - la).exp())).ln_1p()
        } else if b < 0.0 {
            let (la, lb) = (log_normal_cdf(a), log_normal_cdf(b));
            lb + (-((la - lb).exp())).ln_1p()
        } else {
            // A straddling interval always has mass ≥ Φ(β) - Φ(0) > 0.
            f64::NEG_INFINITY
        }
    }

    /// True when the truncation mass is below anything representable; the
    /// sampler then degenerates to the bound nearest μ.
    pub fn mass_underflows(&self) -> bool {
        self.mass() <= 0.0
    }

    /// Inverse-CDF sample. Always lands inside `[lower, upper]` (the final
    /// clamp absorbs floating-point spill at the ends).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z = self.mass();
        if z <= 0.0 {
            // Degenerate truncation: collapse to the nearer bound.
            return if (self.mu - self.lower).abs() <= (self.mu - self.upper).abs() {
                self.lower
            } else {
                self.upper
            };
        }
        let (a, b) = self.bounds_std();
        let u: f64 = rng.random();
        let x = if a >= 0.0 {
            // Upper tail: invert the survival function, q = sf(z) is exact
            // there and Φ⁻¹(q) = -z for q ≤ 1/2.
            let q = normal_sf(b) + (1.0 - u) * z;
            self.mu - self.sigma * normal_quantile(q)
        } else {
            let p = normal_cdf(a) + u * z;
            self.mu + self.sigma * normal_quantile(p)
        };
        x.clamp(self.lower, self.upper)
    }

    /// CDF of the truncated distribution (0 below support, 1 above).
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lower {
            return 0.0;
        }
        if x >= self.upper {
            return 1.0;
        }
        let (a, _) = self.bounds_std();
        let zx = (x - self.mu) / self.sigma;
        let f = if a > 0.0 {
            (normal_sf(a) - normal_sf(zx)) / self.mass()
        } else {
            (normal_cdf(zx) - normal_cdf(a)) / self.mass()
        };
        f.clamp(0.0, 1.0)
    }

    /// Mean `μ + σ (φ(α) - φ(β)) / Z` of the truncated distribution.
    pub fn mean(&self) -> f64 {
        let (a, b) = self.bounds_std();
        let m = self.mu + self.sigma * (normal_pdf(a) - normal_pdf(b)) / self.mass();
        m.clamp(self.lower, self.upper)
    }

    /// Log density; errors outside the support or if `Z` underflowed.
    pub fn log_pdf(&self, x: f64) -> Result<f64, PolicyError> {
        if !(x >= self.lower && x <= self.upper) {
            return Err(PolicyError::OutOfSupport {
                x,
                lower: self.lower,
                upper: self.upper,
            });
        }
        let ln_z = self.ln_mass();
        if !ln_z.is_finite() {
            return Err(PolicyError::DegenerateMass {
                mu: self.mu,
                sigma: self.sigma,
            });
        }
        let z = (x - self.mu) / self.sigma;
        Ok(-0.5 * z * z - LN_SQRT_2PI - self.sigma.ln() - ln_z)
    }

    /// Score functions `(∂ ln π/∂μ, ∂ ln π/∂σ)` at `x`.
    pub fn grad_log_pdf(&self, x: f64) -> Result<(f64, f64), PolicyError> {
        if !(x >= self.lower && x <= self.upper) {
            return Err(PolicyError::OutOfSupport {
                x,
                lower: self.lower,
                upper: self.upper,
            });
        }
        let z = self.mass();
        if z <= 0.0 {
            return Err(PolicyError::DegenerateMass {
                mu: self.mu,
                sigma: self.sigma,
            });
        }
        let (a, b) = self.bounds_std();
        let zx = (x - self.mu) / self.sigma;
        let (pa, pb) = (normal_pdf(a), normal_pdf(b));
        let d_mu = zx / self.sigma + (pb - pa) / (self.sigma * z);
        let d_sigma = (zx * zx - 1.0) / self.sigma + (b * pb - a * pa) / (self.sigma * z);
        Ok((d_mu, d_sigma))
    }
}

// ---------------------------------------------------------------------------
// Network output head
// ---------------------------------------------------------------------------

/// Bounds for the squashed policy scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyHead {
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl PolicyHead {
    pub fn new(sigma_min: f64, sigma_max: f64) -> Result<Self, PolicyError> {
        if !(sigma_min.is_finite() && sigma_max.is_finite() && 0.0 < sigma_min
            && sigma_min < sigma_max)
        {
            return Err(PolicyError::InvalidHead {
                sigma_min,
                sigma_max,
            });
        }
        Ok(PolicyHead {
            sigma_min,
            sigma_max,
        })
    }

    /// The default head for a per-carrier cap `p_s`:
    /// `σ ∈ [1e-3·p_s, 0.5·p_s]`.
    pub fn for_power_cap(p_s: f64) -> Result<Self, PolicyError> {
        PolicyHead::new(1e-3 * p_s, 0.5 * p_s)
    }
}

/// Numerically stable logistic function.
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps a network's two raw outputs to the policy distribution on `[0, p_s]`:
/// `μ = p_s·logistic(raw₀)`, `σ = σ_min + (σ_max - σ_min)·logistic(raw₁)`.
pub fn from_network_outputs(
    raw: [f64; 2],
    p_s: f64,
    head: &PolicyHead,
) -> Result<TruncatedGaussian, PolicyError> {
    for value in raw {
        if !value.is_finite() {
            return Err(PolicyError::NonFiniteRaw { value });
        }
    }
    let mu = p_s * logistic(raw[0]);
    let sigma = head.sigma_min + (head.sigma_max - head.sigma_min) * logistic(raw[1]);
    TruncatedGaussian::new(mu, sigma, 0.0, p_s)
}

/// Diagonal Jacobian `(∂μ/∂raw₀, ∂σ/∂raw₁)` of [`from_network_outputs`];
/// the off-diagonal terms are identically zero.
pub fn head_jacobian(raw: [f64; 2], p_s: f64, head: &PolicyHead) -> [f64; 2] {
    let s0 = logistic(raw[0]);
    let s1 = logistic(raw[1]);
    [
        p_s * s0 * (1.0 - s0),
        (head.sigma_max - head.sigma_min) * s1 * (1.0 - s1),
    ]
}
