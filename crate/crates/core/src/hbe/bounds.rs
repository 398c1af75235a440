//! Second-moment bounds for hashing-based estimators.

use crate::error::{domain, input, Result};

/// Bound on `E[Z²]`, also expressed relative to `μ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceBound {
    pub value: f64,
    pub relative: f64,
}

impl VarianceBound {
    pub fn new(value: f64, mu: f64) -> Self {
        Self { value, relative: value / (mu * mu) }
    }
}

fn check_profile(weights: &[f64], probs: &[f64]) -> Result<()> {
    if weights.len() != probs.len() || weights.is_empty() {
        return input("weights and probabilities must be nonempty and of equal length");
    }
    if probs.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
        return input("probabilities must lie in (0, 1]");
    }
    if weights.iter().any(|&w| !(w >= 0.0 && w <= 1.0)) {
        return input("weights must lie in [0, 1]");
    }
    if probs.windows(2).any(|p| p[0] < p[1]) {
        return input("probabilities must be sorted in non-increasing order");
    }
    Ok(())
}

/// `(1/n²) Σ_i (w_i²/p_i)(i + Σ_{j>i} p_j/p_i)` with 1-based `i`.
pub fn second_moment_upper_bound(weights: &[f64], probs: &[f64], n: usize) -> Result<f64> {
    check_profile(weights, probs)?;
    if n == 0 {
        return input("n must be positive");
    }
    let mut tail = 0.0;
    let mut total = 0.0;
    for i in (0..probs.len()).rev() {
        let (w, p) = (weights[i], probs[i]);
        total += w * w / p * ((i + 1) as f64 + tail / p);
        tail += p;
    }
    Ok(total / (n as f64 * n as f64))
}

/// Two-point bound `4 max_{i,j} f_i A_ij f_j` and the maximizing pair (0-based).
pub fn two_point_variance_bound(weights: &[f64], probs: &[f64], mu: f64) -> Result<(VarianceBound, (usize, usize))> {
    check_profile(weights, probs)?;
    if weights.iter().any(|&w| w <= 0.0) {
        return input("weights must be positive");
    }
    if !(mu > 0.0 && mu <= 1.0) {
        return input(format!("μ must lie in (0, 1], got {mu}"));
    }
    let n = weights.len();
    let f: Vec<f64> = weights.iter().map(|&w| (mu / w).min(1.0)).collect();
    // Suffix maxima of p_j f_j for j > i, prefix maxima of f_j for j ≤ i.
    let mut suffix = vec![(f64::NEG_INFINITY, usize::MAX); n + 1];
    for j in (0..n).rev() {
        let v = probs[j] * f[j];
        suffix[j] = if v > suffix[j + 1].0 { (v, j) } else { suffix[j + 1] };
    }
    let mut best = (f64::NEG_INFINITY, (0, 0));
    let mut prefix = (f64::NEG_INFINITY, 0usize);
    for i in 0..n {
        if f[i] > prefix.0 {
            prefix = (f[i], i);
        }
        let a = weights[i] * weights[i] / probs[i];
        let low = f[i] * a * prefix.0;
        if low > best.0 {
            best = (low, (i, prefix.1));
        }
        if suffix[i + 1].1 != usize::MAX {
            let high = f[i] * a / probs[i] * suffix[i + 1].0;
            if high > best.0 {
                best = (high, (i, suffix[i + 1].1));
            }
        }
    }
    Ok((VarianceBound::new(4.0 * best.0, mu), best.1))
}

/// `μ² M³ {2τ^β + γ^{2−β} + τ^{2β−1} γ^β} μ^{−β}` for a `(τ, γ)`-localized query.
pub fn scale_free_variance_bound(beta: f64, m: f64, mu: f64, tau: f64, gamma: f64) -> Result<VarianceBound> {
    if !(0.5..=1.0).contains(&beta) {
        return domain(format!("β must lie in [1/2, 1], got {beta}"));
    }
    if !(m >= 1.0) {
        return domain(format!("M must be at least 1, got {m}"));
    }
    if !(mu > 0.0 && mu <= 1.0) || !(tau >= mu && tau <= 1.0) || !(0.0..=1.0).contains(&gamma) {
        return domain("requires μ ∈ (0,1], τ ∈ [μ,1], γ ∈ [0,1]");
    }
    let bracket = 2.0 * tau.powf(beta) + gamma.powf(2.0 - beta) + tau.powf(2.0 * beta - 1.0) * gamma.powf(beta);
    let value = mu * mu * m.powi(3) * bracket * mu.powf(-beta);
    Ok(VarianceBound::new(value, mu))
}
