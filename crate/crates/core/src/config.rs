//! TOML experiment configuration.
//!
//! A config file has five sections — `[experiment]`, `[channel]`, and the
//! optional `[system]`, `[sdg]`, `[pddl]` — and resolves to the typed
//! parameter structs of the respective modules. Unknown keys are rejected,
//! solver sections only need the fields they want to override, and parse →
//! serialize → parse is an identity so an emitted `config_used.toml` can be
//! re-run verbatim.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capacity::{SystemParams, Weights};
use crate::channel::{ChannelParams, DEFAULT_GUARD_BAND};
use crate::pddl::PddlConfig;
use crate::rng::{stream_rng, Stream};
use crate::sdg::{ScheduleKind, SdgConfig};

/// The one recognized named weight rule: i.i.d. `ω_i ~ U[0, 1]` drawn from
/// the weight stream of `weight_seed` (falling back to `seed`).
pub const RANDOM_UNIFORM_WEIGHTS: &str = "random_uniform_0_1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{key}: {message}")]
    Invalid { key: &'static str, message: String },
}

fn invalid(key: &'static str, message: String) -> ConfigError {
    ConfigError::Invalid { key, message }
}

// ---------------------------------------------------------------------------
// Sections
// ---------------------------------------------------------------------------

/// How the capacity weights `ω_i` are chosen: the name of a built-in rule or
/// an explicit per-carrier list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightsSpec {
    Named(String),
    Explicit(Vec<f64>),
}

fn default_weights() -> WeightsSpec {
    WeightsSpec::Named(RANDOM_UNIFORM_WEIGHTS.into())
}

fn default_eval_every() -> u64 {
    100
}

fn default_eval_samples() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Number of WDM carriers.
    pub m: usize,
    /// Average total power budget `P_T` in watts.
    pub p_t: f64,
    /// Per-carrier power cap `p_s` in watts.
    pub p_s: f64,
    /// Master seed; every consumer derives its own independent stream.
    pub seed: u64,
    /// Separate seed for drawing random weights (defaults to `seed`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_seed: Option<u64>,
    #[serde(default = "default_weights")]
    pub weights: WeightsSpec,
    /// Held-out evaluation cadence in iterations (0 = final only).
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    /// Held-out CSI set size.
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    /// Output directory for CSVs, checkpoints and the plot script.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn default_n0() -> f64 {
    1.0
}

fn default_guard_band() -> f64 {
    DEFAULT_GUARD_BAND
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    /// Atmospheric attenuation coefficient in 1/m.
    #[serde(default)]
    pub alpha: f64,
    /// Link distance in m.
    pub distance: f64,
    /// Transmit / receive aperture diameters in m.
    pub d_tx: f64,
    pub d_rx: f64,
    /// Log-amplitude turbulence variance σ_x².
    pub sigma_x2: f64,
    /// CNR normalization constant dividing `(h_a·h_t)²`.
    #[serde(default = "default_n0")]
    pub n0: f64,
    #[serde(default)]
    pub clamp_gain_to_unity: bool,
    #[serde(default = "default_guard_band")]
    pub guard_band: f64,
    /// Explicit carrier wavelengths in m (exclusive with the grid fields).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelengths: Option<Vec<f64>>,
    /// Uniform wavelength grid: first carrier and spacing in m.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    /// Optical modulation index per carrier.
    pub omi: f64,
    /// APD multiplication factor.
    pub m_p: f64,
    /// Photodiode responsivity in A/W.
    pub responsivity: f64,
    /// Relative intensity noise in dB/Hz and the bandwidth it acts over.
    pub rin_db_hz: f64,
    pub noise_bandwidth_hz: f64,
    /// APD excess noise exponent.
    pub f_excess: f64,
    /// Receiver temperature in K and load resistance in Ω.
    pub temperature: f64,
    pub r_f: f64,
    /// Physical constants, overridable for testing.
    pub e_charge: f64,
    pub k_boltz: f64,
}

impl Default for SystemSection {
    fn default() -> Self {
        let sys = SystemParams::default();
        SystemSection {
            omi: sys.omi,
            m_p: sys.m_p,
            responsivity: sys.responsivity,
            rin_db_hz: -140.0,
            noise_bandwidth_hz: 1e9,
            f_excess: sys.f_excess,
            temperature: sys.temperature,
            r_f: sys.r_f,
            e_charge: sys.e_charge,
            k_boltz: sys.k_boltz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdgSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_schedule: Option<ScheduleKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refine_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PddlSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_schedule: Option<ScheduleKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_schedule: Option<ScheduleKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_batches: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance_reduction: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_layers: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_min_frac: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_max_frac: Option<f64>,
}

// ---------------------------------------------------------------------------
// Top level
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub channel: ChannelSection,
    #[serde(default)]
    pub system: SystemSection,
    #[serde(default)]
    pub sdg: SdgSection,
    #[serde(default)]
    pub pddl: PddlSection,
}

impl ExperimentConfig {
    /// Parses and validates a config document.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        ExperimentConfig::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let exp = &self.experiment;
        if exp.m == 0 {
            return Err(invalid("experiment.m", "need at least one carrier".into()));
        }
        for (key, v) in [("experiment.p_t", exp.p_t), ("experiment.p_s", exp.p_s)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(key, format!("must be positive, got {v}")));
            }
        }
        if exp.eval_samples == 0 {
            return Err(invalid(
                "experiment.eval_samples",
                "need at least one held-out sample".into(),
            ));
        }
        match &exp.weights {
            WeightsSpec::Named(name) if name == RANDOM_UNIFORM_WEIGHTS => {}
            WeightsSpec::Named(name) => {
                return Err(invalid(
                    "experiment.weights",
                    format!("unknown rule {name:?}, expected {RANDOM_UNIFORM_WEIGHTS:?}"),
                ));
            }
            WeightsSpec::Explicit(w) => {
                if w.len() != exp.m {
                    return Err(invalid(
                        "experiment.weights",
                        format!("{} weights for m = {} carriers", w.len(), exp.m),
                    ));
                }
                if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                    return Err(invalid(
                        "experiment.weights",
                        format!("weights must be nonnegative and finite, got {bad}"),
                    ));
                }
            }
        }
        self.channel_params()?;
        self.system_params()
            .validate()
            .map_err(|e| invalid("system", e.to_string()))?;
        self.sdg_config()
            .validate()
            .map_err(|e| invalid("sdg", e.to_string()))?;
        self.pddl_config()
            .validate()
            .map_err(|e| invalid("pddl", e.to_string()))?;
        Ok(())
    }

    /// The fading-channel model this config describes.
    pub fn channel_params(&self) -> Result<ChannelParams, ConfigError> {
        let ch = &self.channel;
        let wavelengths = match (&ch.wavelengths, ch.lambda_start, ch.lambda_step) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                return Err(invalid(
                    "channel.wavelengths",
                    "give either explicit wavelengths or lambda_start/lambda_step, not both"
                        .into(),
                ));
            }
            (Some(w), None, None) => {
                if w.len() != self.experiment.m {
                    return Err(invalid(
                        "channel.wavelengths",
                        format!("{} wavelengths for m = {} carriers", w.len(), self.experiment.m),
                    ));
                }
                w.clone()
            }
            (None, Some(start), Some(step)) => {
                ChannelParams::wavelength_grid(self.experiment.m, start, step)
            }
            (None, _, _) => {
                return Err(invalid(
                    "channel.lambda_start",
                    "need either wavelengths or lambda_start + lambda_step".into(),
                ));
            }
        };
        let params = ChannelParams {
            wavelengths,
            alpha: ch.alpha,
            distance: ch.distance,
            d_tx: ch.d_tx,
            d_rx: ch.d_rx,
            sigma_x2: ch.sigma_x2,
            n0: ch.n0,
            clamp_gain_to_unity: ch.clamp_gain_to_unity,
            guard_band: ch.guard_band,
        };
        params
            .validate()
            .map_err(|e| invalid("channel", e.to_string()))?;
        Ok(params)
    }

    /// The receiver model, with RIN converted from dB/Hz over the configured
    /// noise bandwidth.
    pub fn system_params(&self) -> SystemParams {
        let s = &self.system;
        SystemParams {
            omi: s.omi,
            m_p: s.m_p,
            responsivity: s.responsivity,
            rin: SystemParams::rin_linear(s.rin_db_hz, s.noise_bandwidth_hz),
            e_charge: s.e_charge,
            f_excess: s.f_excess,
            k_boltz: s.k_boltz,
            temperature: s.temperature,
            r_f: s.r_f,
        }
    }

    /// SDG settings: section overrides on top of the budget-aware defaults.
    pub fn sdg_config(&self) -> SdgConfig {
        let d = SdgConfig::defaults_for(self.experiment.p_t);
        let s = &self.sdg;
        SdgConfig {
            iterations: s.iterations.unwrap_or(d.iterations),
            batch_size: s.batch_size.unwrap_or(d.batch_size),
            eta: s.eta.unwrap_or(d.eta),
            eta_schedule: s.eta_schedule.unwrap_or(d.eta_schedule),
            grid_points: s.grid_points.unwrap_or(d.grid_points),
            refine_tol: s.refine_tol.unwrap_or(d.refine_tol),
            lambda0: s.lambda0.unwrap_or(d.lambda0),
        }
    }

    /// PDDL settings: section overrides on top of the budget-aware defaults.
    pub fn pddl_config(&self) -> PddlConfig {
        let d = PddlConfig::defaults_for(self.experiment.p_t);
        let p = &self.pddl;
        PddlConfig {
            iterations: p.iterations.unwrap_or(d.iterations),
            batch_size: p.batch_size.unwrap_or(d.batch_size),
            delta: p.delta.unwrap_or(d.delta),
            delta_schedule: p.delta_schedule.unwrap_or(d.delta_schedule),
            eta: p.eta.unwrap_or(d.eta),
            eta_schedule: p.eta_schedule.unwrap_or(d.eta_schedule),
            lambda0: p.lambda0.unwrap_or(d.lambda0),
            warmup_batches: p.warmup_batches.unwrap_or(d.warmup_batches),
            variance_reduction: p.variance_reduction.unwrap_or(d.variance_reduction),
            hidden_layers: p.hidden_layers.clone().unwrap_or(d.hidden_layers),
            sigma_min_frac: p.sigma_min_frac.unwrap_or(d.sigma_min_frac),
            sigma_max_frac: p.sigma_max_frac.unwrap_or(d.sigma_max_frac),
        }
    }

    /// The capacity weights: explicit values, or the named uniform draw from
    /// the dedicated weight stream.
    pub fn resolved_weights(&self) -> Result<Weights, ConfigError> {
        match &self.experiment.weights {
            WeightsSpec::Explicit(w) => Weights::new(w.clone())
                .map_err(|e| invalid("experiment.weights", e.to_string())),
            WeightsSpec::Named(_) => {
                let seed = self.experiment.weight_seed.unwrap_or(self.experiment.seed);
                let mut rng = stream_rng(seed, Stream::Weights);
                Ok(Weights::random_uniform(self.experiment.m, &mut rng))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[experiment]
m = 4
p_t = 1.2
p_s = 0.3
seed = 7

[channel]
distance = 1000.0
d_tx = 0.05
d_rx = 0.1
sigma_x2 = 0.1
lambda_start = 1.52e-6
lambda_step = 5e-9
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.experiment.eval_every, 100);
        assert_eq!(cfg.experiment.eval_samples, 1000);
        assert_eq!(cfg.experiment.weights, default_weights());
        assert_eq!(cfg.channel.n0, 1.0);
        assert_eq!(cfg.channel.guard_band, 5e-9);
        assert!(!cfg.channel.clamp_gain_to_unity);
        assert_eq!(cfg.system_params(), SystemParams::default());
        assert_eq!(cfg.sdg_config(), SdgConfig::defaults_for(1.2));
        assert_eq!(cfg.pddl_config(), PddlConfig::defaults_for(1.2));
        let chan = cfg.channel_params().unwrap();
        assert_eq!(chan.m(), 4);
        assert!((chan.wavelengths[1] - 1.525e-6).abs() < 1e-18);
    }

    #[test]
    fn parse_serialize_parse_is_identity() {
        let text = r#"
[experiment]
m = 2
p_t = 0.5
p_s = 0.3
seed = 42
weight_seed = 43
weights = [0.25, 0.75]
eval_every = 10
eval_samples = 20
out_dir = "out/run1"

[channel]
alpha = 1e-4
distance = 1000.0
d_tx = 0.05
d_rx = 0.1
sigma_x2 = 0.09
n0 = 3e9
clamp_gain_to_unity = true
wavelengths = [1.52e-6, 1.53e-6]

[system]
rin_db_hz = -145.0
temperature = 290.0

[sdg]
iterations = 500
eta = 0.01

[pddl]
iterations = 1000
hidden_layers = [8, 4]
variance_reduction = true
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        let emitted = cfg.to_toml_string().unwrap();
        let reparsed = ExperimentConfig::from_toml_str(&emitted).unwrap();
        assert_eq!(cfg, reparsed, "parse → serialize → parse must be identity");
        // Spot-check the merge: overridden fields stick, the rest default.
        let sdg = cfg.sdg_config();
        assert_eq!(sdg.iterations, 500);
        assert_eq!(sdg.eta, 0.01);
        assert_eq!(sdg.grid_points, 256);
        let pddl = cfg.pddl_config();
        assert_eq!(pddl.hidden_layers, vec![8, 4]);
        assert!(pddl.variance_reduction);
        assert_eq!(pddl.batch_size, 32);
        assert!(
            (cfg.system_params().rin - SystemParams::rin_linear(-145.0, 1e9)).abs() < 1e-20
        );
        assert_eq!(cfg.system_params().temperature, 290.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("seed = 7", "seed = 7\ntypo_key = 1");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
        assert!(err.to_string().contains("typo_key"), "got: {err}");
    }

    #[test]
    fn wavelength_spec_must_be_exactly_one_of_grid_or_explicit() {
        let both = MINIMAL.replace(
            "lambda_start = 1.52e-6",
            "wavelengths = [1.52e-6, 1.53e-6, 1.54e-6, 1.55e-6]\nlambda_start = 1.52e-6",
        );
        let err = ExperimentConfig::from_toml_str(&both).unwrap_err();
        assert!(err.to_string().contains("channel.wavelengths"), "got: {err}");

        let neither = MINIMAL
            .replace("lambda_start = 1.52e-6\n", "")
            .replace("lambda_step = 5e-9\n", "");
        let err = ExperimentConfig::from_toml_str(&neither).unwrap_err();
        assert!(err.to_string().contains("channel.lambda_start"), "got: {err}");

        let wrong_len = MINIMAL
            .replace("lambda_start = 1.52e-6\n", "wavelengths = [1.52e-6]\n")
            .replace("lambda_step = 5e-9\n", "");
        let err = ExperimentConfig::from_toml_str(&wrong_len).unwrap_err();
        assert!(err.to_string().contains("4 carriers"), "got: {err}");
    }

    #[test]
    fn weight_validation_names_the_offending_key() {
        let bad_rule = MINIMAL.replace("seed = 7", "seed = 7\nweights = \"pareto\"");
        let err = ExperimentConfig::from_toml_str(&bad_rule).unwrap_err();
        assert!(err.to_string().contains("experiment.weights"), "got: {err}");

        let bad_len = MINIMAL.replace("seed = 7", "seed = 7\nweights = [0.5, 0.5]");
        let err = ExperimentConfig::from_toml_str(&bad_len).unwrap_err();
        assert!(err.to_string().contains("m = 4"), "got: {err}");

        let negative = MINIMAL.replace(
            "seed = 7",
            "seed = 7\nweights = [0.5, -0.5, 0.1, 0.2]",
        );
        assert!(ExperimentConfig::from_toml_str(&negative).is_err());
    }

    #[test]
    fn resolved_weights_are_deterministic_and_respect_weight_seed() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let w1 = cfg.resolved_weights().unwrap();
        let w2 = cfg.resolved_weights().unwrap();
        assert_eq!(w1.w, w2.w);
        assert_eq!(w1.len(), 4);
        assert!(w1.w.iter().all(|v| (0.0..=1.0).contains(v)));

        // Same master seed, different weight seed → different draw.
        let other = MINIMAL.replace("seed = 7", "seed = 7\nweight_seed = 8");
        let cfg2 = ExperimentConfig::from_toml_str(&other).unwrap();
        assert_ne!(cfg2.resolved_weights().unwrap().w, w1.w);

        let explicit = MINIMAL.replace(
            "seed = 7",
            "seed = 7\nweights = [0.1, 0.2, 0.3, 0.4]",
        );
        let cfg3 = ExperimentConfig::from_toml_str(&explicit).unwrap();
        assert_eq!(cfg3.resolved_weights().unwrap().w, vec![0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn solver_sections_are_validated() {
        let bad_sdg = format!("{MINIMAL}\n[sdg]\ngrid_points = 1\n");
        let err = ExperimentConfig::from_toml_str(&bad_sdg).unwrap_err();
        assert!(err.to_string().starts_with("sdg:"), "got: {err}");

        let bad_pddl = format!("{MINIMAL}\n[pddl]\nsigma_min_frac = 0.9\n");
        let err = ExperimentConfig::from_toml_str(&bad_pddl).unwrap_err();
        assert!(err.to_string().starts_with("pddl:"), "got: {err}");
    }
}
