//! Shared numerical oracles for the acceptance suite.
//!
//! Everything here is deliberately *independent* of the library's own
//! numerics: the dense-grid maximizer re-derives optima by brute force, the
//! quadrature and finite-difference helpers build reference integrals and
//! gradients from function values alone, and the reference forward pass
//! recomputes network outputs straight from the flat parameter layout. The
//! acceptance criteria compare the library against these, never against
//! itself.

use std::path::PathBuf;

use rofso_core::ExperimentConfig;

/// Loads one of the bundled experiment configs by file name.
pub fn bundled_config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    ExperimentConfig::from_path(&path)
        .unwrap_or_else(|e| panic!("bundled config {name} must parse: {e}"))
}

/// Guarded relative error `|a - b| / max(|a|, |b|, floor)`: relative where
/// the values are large, absolute (rescaled by `floor`) where both are small
/// and a pure ratio would amplify noise below the comparison's resolution.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Composite Simpson quadrature of `f` over `[a, b]` with an even number of
/// `panels`; the error is `O(((b - a) / panels)^4)` for smooth integrands.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    assert!(panels >= 2 && panels.is_multiple_of(2), "panels must be even");
    let h = (b - a) / panels as f64;
    let mut acc = f(a) + f(b);
    for k in 1..panels {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * k as f64);
    }
    acc * h / 3.0
}

/// Brute-force maximizer of `f` on `points` equally spaced points covering
/// `[a, b]`; returns `(argmax, max)` keeping the smallest `x` on ties.
pub fn grid_max<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, points: usize) -> (f64, f64) {
    assert!(points >= 2, "a grid needs at least its two endpoints");
    let step = (b - a) / (points - 1) as f64;
    let mut best = (a, f(a));
    for k in 1..points {
        let x = if k == points - 1 { b } else { a + step * k as f64 };
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

/// Second-order central difference `(f(x + ε) - f(x - ε)) / 2ε`.
pub fn central_fd2<F: Fn(f64) -> f64>(f: F, x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

/// Fourth-order central difference
/// `(8(f(x + ε) - f(x - ε)) - (f(x + 2ε) - f(x - 2ε))) / 12ε`,
/// for comparisons whose tolerance sits below what the second-order stencil
/// can reach at a rounding-safe step size.
pub fn central_fd4<F: Fn(f64) -> f64>(f: F, x: f64, eps: f64) -> f64 {
    (8.0 * (f(x + eps) - f(x - eps)) - (f(x + 2.0 * eps) - f(x - 2.0 * eps))) / (12.0 * eps)
}

/// Two-sided Kolmogorov–Smirnov statistic of a sample against `cdf`:
/// `max_i max(F(x_(i)) - (i - 1)/n, i/n - F(x_(i)))`. Sorts in place.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &mut [f64], cdf: F) -> f64 {
    assert!(!samples.is_empty(), "KS statistic needs samples");
    samples.sort_by(|a, b| a.partial_cmp(b).expect("samples must not contain NaN"));
    let n = samples.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let fx = cdf(x);
        d = d.max(fx - i as f64 / n).max((i + 1) as f64 / n - fx);
    }
    d
}

/// Sample mean and its standard error `s / √n`.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    assert!(xs.len() >= 2, "standard error needs at least two samples");
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Reference MLP forward pass recomputed from the flat parameter layout:
/// per layer `z = W·x + b` with the rows of `W` stored contiguously followed
/// by the biases, and ReLU on every layer but the last. Returns the output
/// together with the smallest hidden-layer `|pre-activation|` — a point with
/// a tiny margin sits on a ReLU kink, where finite differences of the
/// network are meaningless.
pub fn ref_forward(sizes: &[usize], theta: &[f64], input: &[f64]) -> (Vec<f64>, f64) {
    let mut x = input.to_vec();
    let mut offset = 0;
    let mut min_margin = f64::INFINITY;
    for (l, w) in sizes.windows(2).enumerate() {
        let (n_in, n_out) = (w[0], w[1]);
        let weights = &theta[offset..offset + n_out * n_in];
        let biases = &theta[offset + n_out * n_in..offset + n_out * n_in + n_out];
        offset += n_out * n_in + n_out;
        let mut z = vec![0.0; n_out];
        for o in 0..n_out {
            z[o] = biases[o]
                + weights[o * n_in..(o + 1) * n_in]
                    .iter()
                    .zip(&x)
                    .map(|(w, x)| w * x)
                    .sum::<f64>();
        }
        if l + 2 < sizes.len() {
            for v in &mut z {
                min_margin = min_margin.min(v.abs());
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        x = z;
    }
    assert_eq!(offset, theta.len(), "parameter vector does not match layout");
    (x, min_margin)
}
