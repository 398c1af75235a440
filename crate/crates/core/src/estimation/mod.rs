//! Mean estimation from a stream of unbiased samples: median of means,
//! adaptive mean relaxation with shared samples, and the two-phase density
//! query built on them.

mod baselines;

pub use baselines::{rff_sample, rff_second_moment, rs_sample, RffSampler, RsSampler};

use crate::error::{input, HbeError, Result};
use crate::hbe::HbeIndex;
use crate::numeric::{median, KahanSum};
use crate::seed::Rng;

/// Source of i.i.d. samples with unknown mean.
pub trait Sampler {
    fn sample(&mut self) -> Result<f64>;
}

/// Adapts a closure into a [`Sampler`].
pub struct FnSampler<F>(pub F);

impl<F: FnMut() -> Result<f64>> Sampler for FnSampler<F> {
    fn sample(&mut self) -> Result<f64> {
        (self.0)()
    }
}

/// A sampler paired with its relative-variance bound `V(μ)` and an optional sample budget.
pub struct EstimatorHandle<'v, S> {
    sampler: S,
    v_fn: Box<dyn Fn(f64) -> f64 + 'v>,
    budget: Option<u64>,
    drawn: u64,
    steps: u32,
}

impl<'v, S: Sampler> EstimatorHandle<'v, S> {
    /// Checks on a grid that `V ≥ 0`, `V` is non-increasing and `μ² V(μ)` is non-decreasing.
    pub fn new(sampler: S, v_fn: impl Fn(f64) -> f64 + 'v) -> Result<Self> {
        const GRID: usize = 240;
        let mut prev: Option<(f64, f64)> = None;
        for i in 0..=GRID {
            let mu = 10f64.powf(-12.0 * (1.0 - i as f64 / GRID as f64));
            let v = v_fn(mu);
            if !(v >= 0.0 && v.is_finite()) {
                return input(format!("variance bound must be finite and nonnegative, V({mu}) = {v}"));
            }
            if let Some((pv, pm)) = prev {
                if v > pv * (1.0 + 1e-9) {
                    return input(format!("variance bound must be non-increasing, fails near μ = {mu}"));
                }
                if mu * mu * v < pm * (1.0 - 1e-9) {
                    return input(format!("μ²V(μ) must be non-decreasing, fails near μ = {mu}"));
                }
            }
            prev = Some((v, mu * mu * v));
        }
        Ok(Self { sampler, v_fn: Box::new(v_fn), budget: None, drawn: 0, steps: 0 })
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = Some(budget);
        self
    }

    pub fn variance(&self, mu: f64) -> f64 {
        (self.v_fn)(mu)
    }

    pub fn samples_used(&self) -> u64 {
        self.drawn
    }

    pub fn sampler(&self) -> &S {
        &self.sampler
    }

    pub fn draw(&mut self) -> Result<f64> {
        if self.budget.is_some_and(|b| self.drawn >= b) {
            return Err(HbeError::Exhausted {
                samples_used: self.drawn,
                steps: self.steps,
                detail: "sample budget reached".into(),
            });
        }
        match self.sampler.sample() {
            Ok(z) => {
                self.drawn += 1;
                Ok(z)
            }
            Err(HbeError::Exhausted { detail, .. }) => {
                Err(HbeError::Exhausted { samples_used: self.drawn, steps: self.steps, detail })
            }
            Err(e) => Err(e),
        }
    }
}

/// Result of a density or mean query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateReport {
    pub value: f64,
    pub below_threshold: bool,
    pub samples_used: u64,
    pub relaxation_steps: u32,
    pub mu_final: f64,
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return input(format!("{name} must lie in (0, 1), got {v}"));
    }
    Ok(())
}

/// Block size `m = ⌈6V/ε²⌉` and block count `L = ⌈9 ln(1/δ)⌉`.
pub fn mom_sizes(v: f64, eps: f64, delta: f64) -> (u64, u64) {
    let m = (6.0 * v / (eps * eps)).ceil().max(1.0) as u64;
    let l = (9.0 * (1.0 / delta).ln()).ceil().max(1.0) as u64;
    (m, l)
}

/// Median-of-means estimate together with the block means it was taken from.
#[derive(Debug, Clone, PartialEq)]
pub struct MomOutcome {
    pub estimate: f64,
    pub block_means: Vec<f64>,
}

pub fn median_of_means_detailed<S: Sampler>(h: &mut EstimatorHandle<S>, v: f64, eps: f64, delta: f64) -> Result<MomOutcome> {
    check_unit("ε", eps)?;
    check_unit("δ", delta)?;
    if !(v >= 0.0 && v.is_finite()) {
        return input(format!("V must be finite and nonnegative, got {v}"));
    }
    let (m, l) = mom_sizes(v, eps, delta);
    let mut block_means = Vec::with_capacity(l as usize);
    for _ in 0..l {
        let mut s = KahanSum::new();
        for _ in 0..m {
            s.add(h.draw()?);
        }
        block_means.push(s.value() / m as f64);
    }
    let estimate = median(&mut block_means.clone());
    Ok(MomOutcome { estimate, block_means })
}

pub fn median_of_means<S: Sampler>(h: &mut EstimatorHandle<S>, v: f64, eps: f64, delta: f64) -> Result<f64> {
    Ok(median_of_means_detailed(h, v, eps, delta)?.estimate)
}

/// Derived constants of the relaxation schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmrParams {
    pub eps: f64,
    pub c: f64,
    pub gamma: f64,
    pub delta: f64,
    pub blocks: u64,
    /// Last level index the loop may visit.
    pub loop_cutoff: f64,
    /// Largest accepted level index whose estimate is returned.
    pub output_cutoff: f64,
}

pub fn amr_params(alpha: f64, tau: f64, chi: f64) -> Result<AmrParams> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return input(format!("α must lie in (0, 1], got {alpha}"));
    }
    check_unit("τ", tau)?;
    check_unit("χ", chi)?;
    let eps = 2.0 * alpha / 7.0;
    let c = eps / 2.0;
    let gamma = eps / 7.0;
    let ln_inv_tau = (1.0 / tau).ln();
    let delta = 2.0 * alpha / (49.0 * ln_inv_tau) * chi;
    Ok(AmrParams {
        eps,
        c,
        gamma,
        delta,
        blocks: (9.0 * (1.0 / delta).ln()).ceil().max(1.0) as u64,
        loop_cutoff: (tau / (1.0 - (c + eps))).ln() / (1.0 - gamma).ln(),
        output_cutoff: 49.0 * ln_inv_tau / (2.0 * alpha),
    })
}

/// Adaptive mean relaxation with shared running sums.
///
/// Level `i` tests `μ_i = (1−γ)^i` after topping every block up to
/// `⌈54 V(μ_i)/ε²⌉` samples. If no level is accepted before the loop cutoff,
/// the last median is returned when it is at least `3τ/4` and 0 otherwise.
pub fn amr<S: Sampler>(h: &mut EstimatorHandle<S>, alpha: f64, tau: f64, chi: f64) -> Result<EstimateReport> {
    let p = amr_params(alpha, tau, chi)?;
    let blocks = p.blocks as usize;
    let mut sums = vec![KahanSum::new(); blocks];
    let mut count = 0u64;
    let mut means = vec![0.0; blocks];
    let start = h.samples_used();
    h.steps = 0;
    let mut i = 0u32;
    loop {
        let mu_i = (1.0 - p.gamma).powi(i as i32);
        let target = (54.0 * h.variance(mu_i) / (p.eps * p.eps)).ceil().max(1.0) as u64;
        if target > count {
            for s in sums.iter_mut() {
                for _ in count..target {
                    s.add(h.draw()?);
                }
            }
            count = target;
        }
        for (m, s) in means.iter_mut().zip(&sums) {
            *m = s.value() / count as f64;
        }
        let z = median(&mut means);
        let accepted = (z - mu_i).abs() <= p.c * mu_i;
        if !accepted {
            i += 1;
            h.steps = i;
        }
        if accepted || i as f64 > p.loop_cutoff {
            let keep = if accepted { i as f64 <= p.output_cutoff } else { z >= 0.75 * tau };
            return Ok(EstimateReport {
                value: if keep { z } else { 0.0 },
                below_threshold: !keep,
                samples_used: h.samples_used() - start,
                relaxation_steps: i,
                mu_final: (1.0 - p.gamma).powi(i as i32),
            });
        }
    }
}

/// Table count `C_N ⌈ln(2/χ) (54/(ε/3)²) V(τ)⌉` that a query at `(ε, τ, χ)` is provisioned for.
pub fn required_tables(eps: f64, chi: f64, v_tau: f64, c_n: f64) -> u64 {
    let base = ((2.0 / chi).ln() * 54.0 / (eps / 3.0).powi(2) * v_tau).ceil();
    (c_n * base).ceil().max(1.0) as u64
}

/// Largest number of samples [`query_with_alpha`] can draw for a variance model `v`.
///
/// The relaxation stops at a level no lower than `τ/(1−c−ε)·(1−γ)`, and the
/// second phase runs at a mean no lower than `min((1−c)` times that level, `3τ/4)`.
pub fn query_budget(eps: f64, tau: f64, chi: f64, alpha: f64, v: impl Fn(f64) -> f64) -> Result<u64> {
    check_unit("ε", eps)?;
    let p = amr_params(alpha, tau, chi / 2.0)?;
    let last = (1.0 - p.gamma).powf(p.loop_cutoff.floor() + 1.0).min(1.0);
    let per_block = (54.0 * v(last) / (p.eps * p.eps)).ceil().max(1.0) as u64;
    let phase1 = per_block.saturating_mul(p.blocks);
    let mu2 = ((1.0 - p.c) * last).min(0.75 * tau);
    let (m, l) = mom_sizes(v(mu2 / 2.0), eps, chi / 2.0);
    Ok(phase1.saturating_add(m.saturating_mul(l)))
}

/// Two-phase query on an arbitrary sampler: constant-factor relaxation at
/// failure `χ/2`, then one median-of-means pass at accuracy `ε` using `V(μ̃/2)`.
pub fn query_with<S: Sampler>(h: &mut EstimatorHandle<S>, eps: f64, tau: f64, chi: f64) -> Result<EstimateReport> {
    query_with_alpha(h, eps, tau, chi, 1.0)
}

/// [`query_with`] with a different relaxation accuracy `α` in the first phase.
pub fn query_with_alpha<S: Sampler>(h: &mut EstimatorHandle<S>, eps: f64, tau: f64, chi: f64, alpha: f64) -> Result<EstimateReport> {
    check_unit("ε", eps)?;
    let phase1 = amr(h, alpha, tau, chi / 2.0)?;
    if phase1.below_threshold {
        return Ok(phase1);
    }
    let v = h.variance(phase1.value / 2.0);
    let value = median_of_means(h, v, eps, chi / 2.0)?;
    Ok(EstimateReport { value, samples_used: h.samples_used(), ..phase1 })
}

/// Relative-error density estimate of `x` against the index.
pub fn query_kde(index: &HbeIndex, x: &[f64], eps: f64, tau: f64, chi: f64, rng: Rng) -> Result<EstimateReport> {
    let session = index.session(x, rng)?;
    let mut h = EstimatorHandle::new(session, |mu| index.variance(mu))?;
    query_with(&mut h, eps, tau, chi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand::Rng as _;

    fn constant(mu: f64) -> EstimatorHandle<'static, FnSampler<impl FnMut() -> Result<f64>>> {
        EstimatorHandle::new(FnSampler(move || Ok(mu)), |m| 1.0 / m).unwrap()
    }

    #[test]
    fn mom_sizes_reference() {
        assert_eq!(mom_sizes(2.0, 0.5, 0.01), (48, 42));
    }

    #[test]
    fn mom_of_constant_is_exact() {
        let mut h = constant(0.3);
        assert_eq!(median_of_means(&mut h, 2.0, 0.5, 0.01).unwrap(), 0.3);
        assert_eq!(h.samples_used(), 48 * 42);
    }

    #[test]
    fn amr_parameters_reference() {
        let p = amr_params(0.7, 0.01, 0.1).unwrap();
        assert!((p.eps - 0.2).abs() < 1e-15);
        assert!((p.c - 0.1).abs() < 1e-15);
        assert!((p.gamma - 0.2 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn amr_on_constant_sampler() {
        let mut h = constant(0.3);
        let r = amr(&mut h, 0.7, 0.01, 0.1).unwrap();
        assert!(!r.below_threshold);
        assert!((r.value - 0.3).abs() <= 0.7 * 0.3);
        // First accepted level is the first one inside the window.
        let p = amr_params(0.7, 0.01, 0.1).unwrap();
        let first = (0..).find(|&i| (0.3 - (1.0 - p.gamma).powi(i)).abs() <= p.c * (1.0 - p.gamma).powi(i)).unwrap();
        assert_eq!(r.relaxation_steps, first as u32);
    }

    #[test]
    fn amr_zero_sampler_is_below_threshold() {
        let mut h = constant(0.0);
        let r = amr(&mut h, 1.0, 0.01, 0.1).unwrap();
        assert!(r.below_threshold);
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn budget_exhaustion_reports_samples() {
        let mut h = constant(0.5).with_budget(100);
        match median_of_means(&mut h, 2.0, 0.5, 0.01) {
            Err(HbeError::Exhausted { samples_used, .. }) => assert_eq!(samples_used, 100),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_variance_function_is_rejected() {
        assert!(EstimatorHandle::new(FnSampler(|| Ok(1.0)), |m: f64| m).is_err());
        assert!(EstimatorHandle::new(FnSampler(|| Ok(1.0)), |m: f64| 1.0 / (m * m * m)).is_err());
    }

    #[test]
    fn bernoulli_mom_is_accurate() {
        let mut rng = rng_from_seed(2);
        let mu = 0.1;
        let mut h = EstimatorHandle::new(FnSampler(move || Ok(if rng.random::<f64>() < mu { 1.0 } else { 0.0 })), |m| 1.0 / m).unwrap();
        let est = median_of_means(&mut h, 1.0 / mu, 0.2, 0.01).unwrap();
        assert!((est - mu).abs() <= 0.2 * mu);
    }

    #[test]
    fn required_tables_formula() {
        let n = required_tables(0.3, 0.1, 1000.0, 1.0);
        let expected = ((20f64).ln() * 5400.0 * 1000.0).ceil() as u64;
        assert_eq!(n, expected);
    }

    #[test]
    fn query_never_exceeds_its_budget() {
        let (eps, tau, chi) = (0.5, 0.02, 0.2);
        let budget = query_budget(eps, tau, chi, 1.0, |m| 1.0 / m).unwrap();
        for (k, mu) in [0.9, 0.3, 0.05, 0.021, 0.012, 0.004, 0.0].into_iter().enumerate() {
            let mut rng = rng_from_seed(40 + k as u64);
            let sampler = FnSampler(move || Ok(if rng.random::<f64>() < mu { 1.0 } else { 0.0 }));
            let mut h = EstimatorHandle::new(sampler, |m| 1.0 / m).unwrap().with_budget(budget);
            let r = query_with(&mut h, eps, tau, chi).unwrap();
            assert!(r.samples_used <= budget);
        }
    }
}
