//! Small fully-connected networks with hand-written reverse-mode gradients.
//!
//! The policy networks are tiny (hundreds of parameters), so rather than pull
//! in an autodiff framework the parameters live in one flat `Vec<f64>` packed
//! layer by layer — weight matrix row-major, then bias — and `forward` /
//! `backward` walk that layout. Hidden layers apply ReLU (subgradient 0 at
//! the kink); the output layer is affine. The flat layout is also what the
//! gradient-ascent updates and the checkpoint format operate on.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

/// Errors from shape validation, gradient evaluation, and checkpoint I/O.
#[derive(Debug, Error, PartialEq)]
pub enum MlpError {
    #[error("layer_sizes needs at least an input and an output entry, got {got}")]
    TooFewLayers { got: usize },
    #[error("layer_sizes entries must be nonzero (index {index})")]
    ZeroWidth { index: usize },
    #[error("input has {got} entries, spec expects {expected}")]
    InputDimMismatch { expected: usize, got: usize },
    #[error("output gradient has {got} entries, spec expects {expected}")]
    OutputDimMismatch { expected: usize, got: usize },
    #[error("parameter vector has {got} entries, spec expects {expected}")]
    ParamLenMismatch { expected: usize, got: usize },
    #[error("forward cache does not match this spec (stale cache)")]
    StaleCache,
    #[error("checkpoint parse error at line {line}: {message}")]
    Checkpoint { line: usize, message: String },
}

/// Architecture description: `layer_sizes[0]` inputs through affine layers of
/// the listed widths, ReLU between hidden layers, affine output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self, MlpError> {
        let spec = MlpSpec {
            layer_sizes,
            hidden_activation: Activation::Relu,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), MlpError> {
        if self.layer_sizes.len() < 2 {
            return Err(MlpError::TooFewLayers {
                got: self.layer_sizes.len(),
            });
        }
        for (index, &n) in self.layer_sizes.iter().enumerate() {
            if n == 0 {
                return Err(MlpError::ZeroWidth { index });
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    /// Number of affine layers.
    pub fn layer_count(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Total parameter count `Σ_l (n_l · n_{l-1} + n_l)`.
    ///
    /// The reference policy architecture `[1, 20, 10, 5, 2]` packs
    /// 40 + 210 + 55 + 12 = 317 parameters.
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }

    /// Flat-vector offset of layer `layer`'s weight block; its bias block
    /// starts at `offset + n_out·n_in`.
    fn layer_offset(&self, layer: usize) -> usize {
        self.layer_sizes[..layer + 1]
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }
}

/// Flat parameter vector for a given [`MlpSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub theta: Vec<f64>,
}

impl MlpParams {
    /// Zero-initialized parameters (useful as a gradient accumulator).
    pub fn zeros(spec: &MlpSpec) -> Self {
        MlpParams {
            theta: vec![0.0; spec.param_count()],
        }
    }

    pub fn check_len(&self, spec: &MlpSpec) -> Result<(), MlpError> {
        if self.theta.len() != spec.param_count() {
            return Err(MlpError::ParamLenMismatch {
                expected: spec.param_count(),
                got: self.theta.len(),
            });
        }
        Ok(())
    }

    /// True when every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }
}

/// He-style initialization: weights `~ N(0, 2/fan_in)`, biases zero.
pub fn init<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> MlpParams {
    let mut theta = Vec::with_capacity(spec.param_count());
    for w in spec.layer_sizes.windows(2) {
        let (n_in, n_out) = (w[0], w[1]);
        let scale = (2.0 / n_in as f64).sqrt();
        theta.extend((0..n_out * n_in).map(|_| scale * rng.sample::<f64, _>(StandardNormal)));
        theta.extend(std::iter::repeat_n(0.0, n_out));
    }
    MlpParams { theta }
}

/// Intermediate activations retained by [`forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    /// Pre-activations of every layer (ReLU masks come from these).
    pre: Vec<Vec<f64>>,
    /// Post-activations of every layer (the last one is the output).
    post: Vec<Vec<f64>>,
}

impl ForwardCache {
    fn matches(&self, spec: &MlpSpec) -> bool {
        self.input.len() == spec.input_dim()
            && self.pre.len() == spec.layer_count()
            && self
                .pre
                .iter()
                .zip(self.layer_widths(spec))
                .all(|(v, n)| v.len() == n)
            && self
                .post
                .iter()
                .zip(self.layer_widths(spec))
                .all(|(v, n)| v.len() == n)
    }

    fn layer_widths<'a>(&self, spec: &'a MlpSpec) -> impl Iterator<Item = usize> + 'a {
        spec.layer_sizes[1..].iter().copied()
    }
}

/// Evaluates the network, returning the output and the cache `backward`
/// needs.
pub fn forward(
    spec: &MlpSpec,
    params: &MlpParams,
    input: &[f64],
) -> Result<(Vec<f64>, ForwardCache), MlpError> {
    params.check_len(spec)?;
    if input.len() != spec.input_dim() {
        return Err(MlpError::InputDimMismatch {
            expected: spec.input_dim(),
            got: input.len(),
        });
    }

    let layers = spec.layer_count();
    let mut pre = Vec::with_capacity(layers);
    let mut post = Vec::with_capacity(layers);
    let mut offset = 0usize;
    let mut x: Vec<f64> = input.to_vec();

    for (l, w) in spec.layer_sizes.windows(2).enumerate() {
        let (n_in, n_out) = (w[0], w[1]);
        let weights = &params.theta[offset..offset + n_out * n_in];
        let biases = &params.theta[offset + n_out * n_in..offset + n_out * n_in + n_out];
        offset += n_out * n_in + n_out;

        let mut z = vec![0.0; n_out];
        for o in 0..n_out {
            let row = &weights[o * n_in..(o + 1) * n_in];
            z[o] = biases[o] + row.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>();
        }
        pre.push(z.clone());
        if l + 1 < layers {
            match spec.hidden_activation {
                Activation::Relu => {
                    for v in z.iter_mut() {
                        if *v <= 0.0 {
                            *v = 0.0;
                        }
                    }
                }
            }
        }
        post.push(z.clone());
        x = z;
    }

    Ok((
        x,
        ForwardCache {
            input: input.to_vec(),
            pre,
            post,
        },
    ))
}

/// Reverse-mode gradient of `⟨output_grad, forward(θ, input)⟩` with respect
/// to the flat parameter vector. The cache must come from a `forward` call
/// with the same spec and parameters.
pub fn backward(
    spec: &MlpSpec,
    params: &MlpParams,
    cache: &ForwardCache,
    output_grad: &[f64],
) -> Result<Vec<f64>, MlpError> {
    params.check_len(spec)?;
    if !cache.matches(spec) {
        return Err(MlpError::StaleCache);
    }
    if output_grad.len() != spec.output_dim() {
        return Err(MlpError::OutputDimMismatch {
            expected: spec.output_dim(),
            got: output_grad.len(),
        });
    }

    let mut grad = vec![0.0; spec.param_count()];
    let mut delta = output_grad.to_vec();

    for l in (0..spec.layer_count()).rev() {
        let n_in = spec.layer_sizes[l];
        let n_out = spec.layer_sizes[l + 1];
        let offset = spec.layer_offset(l);
        let x_prev: &[f64] = if l == 0 {
            &cache.input
        } else {
            &cache.post[l - 1]
        };

        for o in 0..n_out {
            let d = delta[o];
            let row = &mut grad[offset + o * n_in..offset + (o + 1) * n_in];
            for (g, &x) in row.iter_mut().zip(x_prev) {
                *g = d * x;
            }
            grad[offset + n_out * n_in + o] = d;
        }

        if l > 0 {
            let weights = &params.theta[offset..offset + n_out * n_in];
            let mut next = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                let row = &weights[o * n_in..(o + 1) * n_in];
                for (n, &w) in next.iter_mut().zip(row) {
                    *n += w * d;
                }
            }
            // ReLU mask from the previous layer's pre-activations; the
            // subgradient at exactly 0 is taken as 0.
            for (n, &z) in next.iter_mut().zip(&cache.pre[l - 1]) {
                if z <= 0.0 {
                    *n = 0.0;
                }
            }
            delta = next;
        }
    }

    Ok(grad)
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &str = "mlp-checkpoint v1";

/// Writes spec and parameters as a small text checkpoint. Floats use Rust's
/// shortest round-trip formatting, so reading the file back reproduces every
/// bit of every (finite) value.
pub fn write_checkpoint<W: Write>(
    out: &mut W,
    spec: &MlpSpec,
    params: &MlpParams,
) -> Result<(), std::io::Error> {
    writeln!(out, "{CHECKPOINT_MAGIC}")?;
    let sizes: Vec<String> = spec.layer_sizes.iter().map(|s| s.to_string()).collect();
    writeln!(out, "layers {}", sizes.join(" "))?;
    writeln!(
        out,
        "activation {}",
        match spec.hidden_activation {
            Activation::Relu => "relu",
        }
    )?;
    writeln!(out, "theta {}", params.theta.len())?;
    for v in &params.theta {
        writeln!(out, "{v}")?;
    }
    Ok(())
}

/// Reads a checkpoint produced by [`write_checkpoint`].
pub fn read_checkpoint<R: BufRead>(input: &mut R) -> Result<(MlpSpec, MlpParams), MlpError> {
    let mut lines = input.lines().enumerate();
    let mut next_line = |what: &str| -> Result<(usize, String), MlpError> {
        match lines.next() {
            Some((n, Ok(line))) => Ok((n + 1, line)),
            Some((n, Err(e))) => Err(MlpError::Checkpoint {
                line: n + 1,
                message: e.to_string(),
            }),
            None => Err(MlpError::Checkpoint {
                line: 0,
                message: format!("unexpected end of file, expected {what}"),
            }),
        }
    };

    let (line, magic) = next_line("magic header")?;
    if magic.trim() != CHECKPOINT_MAGIC {
        return Err(MlpError::Checkpoint {
            line,
            message: format!("bad magic {magic:?}"),
        });
    }

    let (line, layers) = next_line("layer sizes")?;
    let sizes: Vec<usize> = layers
        .strip_prefix("layers ")
        .ok_or(MlpError::Checkpoint {
            line,
            message: "expected `layers ...`".into(),
        })?
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>().map_err(|e| MlpError::Checkpoint {
                line,
                message: e.to_string(),
            })
        })
        .collect::<Result<_, _>>()?;

    let (line, act) = next_line("activation")?;
    let activation = match act.strip_prefix("activation ").map(str::trim) {
        Some("relu") => Activation::Relu,
        other => {
            return Err(MlpError::Checkpoint {
                line,
                message: format!("unknown activation {other:?}"),
            })
        }
    };

    let spec = MlpSpec {
        layer_sizes: sizes,
        hidden_activation: activation,
    };
    spec.validate()?;

    let (line, count_line) = next_line("theta count")?;
    let count: usize = count_line
        .strip_prefix("theta ")
        .ok_or(MlpError::Checkpoint {
            line,
            message: "expected `theta N`".into(),
        })?
        .trim()
        .parse()
        .map_err(|e: std::num::ParseIntError| MlpError::Checkpoint {
            line,
            message: e.to_string(),
        })?;
    if count != spec.param_count() {
        return Err(MlpError::Checkpoint {
            line,
            message: format!(
                "theta count {count} does not match spec ({})",
                spec.param_count()
            ),
        });
    }

    let mut theta = Vec::with_capacity(count);
    for _ in 0..count {
        let (line, value) = next_line("theta entry")?;
        theta.push(
            value
                .trim()
                .parse::<f64>()
                .map_err(|e| MlpError::Checkpoint {
                    line,
                    message: e.to_string(),
                })?,
        );
    }

    Ok((spec, MlpParams { theta }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use proptest::prelude::*;

    #[test]
    fn param_count_matches_hand_arithmetic() {
        // (1·20+20) + (20·10+10) + (10·5+5) + (5·2+2) = 40+210+55+12 = 317.
        let spec = MlpSpec::new(vec![1, 20, 10, 5, 2]).unwrap();
        assert_eq!(spec.param_count(), 317);
        assert_eq!(MlpSpec::new(vec![1, 1]).unwrap().param_count(), 2);
        assert_eq!(MlpSpec::new(vec![3, 4]).unwrap().param_count(), 16);
    }

    #[test]
    fn single_affine_layer_is_w_x_plus_b() {
        let spec = MlpSpec::new(vec![1, 1]).unwrap();
        let params = MlpParams {
            theta: vec![2.5, -0.75],
        };
        let (y, _) = forward(&spec, &params, &[3.0]).unwrap();
        assert_eq!(y, vec![2.5 * 3.0 - 0.75]);
    }

    #[test]
    fn relu_hidden_layer_matches_hand_computation() {
        // [1, 2, 1]: W1 = [1, -1]ᵀ, b1 = 0, W2 = [1, 1], b2 = 0.5.
        let spec = MlpSpec::new(vec![1, 2, 1]).unwrap();
        let params = MlpParams {
            theta: vec![1.0, -1.0, 0.0, 0.0, 1.0, 1.0, 0.5],
        };
        let (y, _) = forward(&spec, &params, &[2.0]).unwrap();
        assert_eq!(y, vec![2.5]); // relu([2, -2]) = [2, 0] → 2 + 0 + 0.5
        let (y, _) = forward(&spec, &params, &[-3.0]).unwrap();
        assert_eq!(y, vec![3.5]); // relu([-3, 3]) = [0, 3] → 3 + 0.5
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        // x = 0 lands exactly on the kink; the backward pass must propagate
        // nothing through it.
        let spec = MlpSpec::new(vec![1, 1, 1]).unwrap();
        let params = MlpParams {
            theta: vec![1.0, 0.0, 1.0, 0.0],
        };
        let (y, cache) = forward(&spec, &params, &[0.0]).unwrap();
        assert_eq!(y, vec![0.0]);
        let grad = backward(&spec, &params, &cache, &[1.0]).unwrap();
        // d/dW1 and d/db1 are blocked by the zero mask; d/db2 flows.
        assert_eq!(grad, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn he_init_has_zero_biases_and_sane_weight_scale() {
        let spec = MlpSpec::new(vec![50, 200]).unwrap();
        let mut rng = stream_rng(0, Stream::PddlInit);
        let params = init(&spec, &mut rng);
        assert!(params.is_finite());
        let weights = &params.theta[..50 * 200];
        let biases = &params.theta[50 * 200..];
        assert!(biases.iter().all(|&b| b == 0.0));
        let var = weights.iter().map(|w| w * w).sum::<f64>() / weights.len() as f64;
        let target = 2.0 / 50.0;
        assert!(
            var > 0.5 * target && var < 2.0 * target,
            "weight variance {var} not within 2× of {target}"
        );
    }

    /// Central finite difference of `⟨d_out, forward(θ)⟩` in coordinate `i`.
    fn fd_grad(spec: &MlpSpec, params: &MlpParams, x: &[f64], d_out: &[f64], i: usize) -> f64 {
        let eps = 1e-6 * params.theta[i].abs().max(1.0);
        let mut plus = params.clone();
        plus.theta[i] += eps;
        let mut minus = params.clone();
        minus.theta[i] -= eps;
        let f = |p: &MlpParams| {
            let (y, _) = forward(spec, p, x).unwrap();
            y.iter().zip(d_out).map(|(a, b)| a * b).sum::<f64>()
        };
        (f(&plus) - f(&minus)) / (2.0 * eps)
    }

    #[test]
    fn backward_matches_finite_differences_at_smooth_points() {
        let spec = MlpSpec::new(vec![2, 4, 3, 2]).unwrap();
        let mut rng = stream_rng(42, Stream::PddlInit);
        let mut checked = 0;
        'attempt: for attempt in 0..50 {
            let params = init(&spec, &mut rng);
            let x = [
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            ];
            let (_, cache) = forward(&spec, &params, &x).unwrap();
            // Stay away from ReLU kinks so the finite difference is valid.
            for layer in &cache.pre[..spec.layer_count() - 1] {
                if layer.iter().any(|z| z.abs() < 1e-3) {
                    continue 'attempt;
                }
            }
            let d_out = [1.0, -0.5];
            let grad = backward(&spec, &params, &cache, &d_out).unwrap();
            for i in (0..spec.param_count()).step_by(5) {
                let fd = fd_grad(&spec, &params, &x, &d_out, i);
                let denom = fd.abs().max(grad[i].abs()).max(1e-6);
                assert!(
                    (fd - grad[i]).abs() / denom < 1e-6,
                    "attempt {attempt}, coord {i}: analytic {} vs fd {fd}",
                    grad[i]
                );
            }
            checked += 1;
            if checked >= 5 {
                return;
            }
        }
        panic!("could not find 5 smooth evaluation points");
    }

    #[test]
    fn shape_errors_are_reported() {
        let spec = MlpSpec::new(vec![2, 3]).unwrap();
        let params = MlpParams::zeros(&spec);
        assert_eq!(
            forward(&spec, &params, &[1.0]).unwrap_err(),
            MlpError::InputDimMismatch {
                expected: 2,
                got: 1
            }
        );
        let short = MlpParams { theta: vec![0.0] };
        assert!(matches!(
            forward(&spec, &short, &[1.0, 2.0]),
            Err(MlpError::ParamLenMismatch { expected: 9, got: 1 })
        ));
        let (_, cache) = forward(&spec, &params, &[1.0, 2.0]).unwrap();
        assert!(matches!(
            backward(&spec, &params, &cache, &[1.0]),
            Err(MlpError::OutputDimMismatch { .. })
        ));
        let other = MlpSpec::new(vec![3, 3]).unwrap();
        let other_params = MlpParams::zeros(&other);
        assert_eq!(
            backward(&other, &other_params, &cache, &[1.0, 1.0, 1.0]).unwrap_err(),
            MlpError::StaleCache
        );
        assert!(MlpSpec::new(vec![4]).is_err());
        assert!(MlpSpec::new(vec![4, 0, 2]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let spec = MlpSpec::new(vec![1, 20, 10, 5, 2]).unwrap();
        let mut rng = stream_rng(7, Stream::PddlInit);
        let mut params = init(&spec, &mut rng);
        params.theta[0] = -0.0;
        params.theta[1] = f64::MIN_POSITIVE; // sub-normal boundary
        params.theta[2] = 1.0 + f64::EPSILON;
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &spec, &params).unwrap();
        let (spec2, params2) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(spec, spec2);
        assert_eq!(params.theta.len(), params2.theta.len());
        for (a, b) in params.theta.iter().zip(&params2.theta) {
            assert_eq!(a.to_bits(), b.to_bits(), "{a} vs {b}");
        }
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let spec = MlpSpec::new(vec![1, 2]).unwrap();
        let params = MlpParams::zeros(&spec);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &spec, &params).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let bad_magic = text.replace("mlp-checkpoint v1", "nope");
        assert!(read_checkpoint(&mut bad_magic.as_bytes()).is_err());
        let truncated = &text[..text.len() - 3];
        assert!(read_checkpoint(&mut truncated.as_bytes()).is_err());
        let bad_count = text.replace("theta 4", "theta 5");
        assert!(read_checkpoint(&mut bad_count.as_bytes()).is_err());
    }

    proptest! {
        // The closed-form count must agree with an explicit enumeration of
        // the packed layout for arbitrary architectures.
        #[test]
        fn param_count_matches_enumeration(sizes in proptest::collection::vec(1usize..8, 2..6)) {
            let spec = MlpSpec::new(sizes.clone()).unwrap();
            let enumerated: usize = (1..sizes.len())
                .map(|l| sizes[l] * sizes[l - 1] + sizes[l])
                .sum();
            prop_assert_eq!(spec.param_count(), enumerated);
            // And forward must accept exactly that many parameters.
            let params = MlpParams { theta: vec![0.01; enumerated] };
            let input = vec![0.5; sizes[0]];
            prop_assert!(forward(&spec, &params, &input).is_ok());
        }

        #[test]
        fn forward_output_dim_is_last_layer(sizes in proptest::collection::vec(1usize..6, 2..5)) {
            let spec = MlpSpec::new(sizes.clone()).unwrap();
            let params = MlpParams { theta: vec![0.1; spec.param_count()] };
            let (y, _) = forward(&spec, &params, &vec![1.0; sizes[0]]).unwrap();
            prop_assert_eq!(y.len(), *sizes.last().unwrap());
        }
    }
}
