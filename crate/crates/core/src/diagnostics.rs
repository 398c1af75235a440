//! Numeric checks of the Hölder-type inequalities behind the variance bounds,
//! plus empirical moment and collision-rate measurements.

use std::io::Write;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{input, Result};
use crate::estimation::Sampler;
use crate::hbe::{make_exponential_hbe, make_student_hbe, HashFamilySpec, HbeScheme, TableHash};
use crate::kernels::PointSet;
use crate::lsh::{collision_prob_euclidean_bounds, p1};
use crate::numeric::KahanSum;
use crate::seed::{stream, Rng, TAG_VERIFY};

const REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub slack: f64,
}

impl InequalityCheck {
    pub fn new(lhs: f64, rhs: f64) -> Self {
        Self { lhs, rhs, holds: lhs <= rhs + REL_TOL * rhs.abs().max(1.0), slack: rhs - lhs }
    }

    /// Whether both sides agree to the checker tolerance.
    pub fn is_tight(&self) -> bool {
        (self.lhs - self.rhs).abs() <= REL_TOL * self.rhs.abs().max(1.0)
    }
}

fn ksum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut s = KahanSum::new();
    for v in it {
        s.add(v);
    }
    s.value()
}

fn check_beta(beta: f64, lo: f64) -> Result<()> {
    if !(beta >= lo && beta <= 1.0) {
        return input(format!("β must lie in [{lo}, 1], got {beta}"));
    }
    Ok(())
}

/// `Σ |x_i|^{(2−β)/β} (i + Σ_{j>i} |x_j|/|x_i|) ≤ n^β (Σ |x_i|^{1/β})^{2−β}` for `|x|` sorted descending.
pub fn check_monotone_holder(x: &[f64], beta: f64) -> Result<InequalityCheck> {
    check_beta(beta, 0.5)?;
    if x.is_empty() {
        return input("vector must be nonempty");
    }
    if x.iter().any(|v| !(v.is_finite() && *v != 0.0)) {
        return input("entries must be finite and nonzero");
    }
    if x.windows(2).any(|w| w[0].abs() < w[1].abs()) {
        return input("entries must be sorted by absolute value, descending");
    }
    let n = x.len();
    let a: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    let mut tail = 0.0;
    let mut terms = vec![0.0; n];
    for i in (0..n).rev() {
        terms[i] = a[i].powf((2.0 - beta) / beta) * ((i + 1) as f64 + tail / a[i]);
        tail += a[i];
    }
    let lhs = ksum(terms);
    let rhs = (n as f64).powf(beta) * ksum(a.iter().map(|v| v.powf(1.0 / beta))).powf(2.0 - beta);
    Ok(InequalityCheck::new(lhs, rhs))
}

/// `Σ_{i∈S, j∈S'} A_ij x_i x_j ≤ (Σ_S v_i|x_i|)(Σ_{S'} w_j|x_j|) max_{S×S'} |A_ij|/(v_i w_j)`.
pub fn check_two_sided_holder(a: &[Vec<f64>], v: &[f64], w: &[f64], s: &[usize], s2: &[usize], x: &[f64]) -> Result<InequalityCheck> {
    let n = x.len();
    if a.len() != n || a.iter().any(|r| r.len() != n) || v.len() != n || w.len() != n {
        return input("matrix, weights and vector sizes disagree");
    }
    if v.iter().chain(w).any(|&u| !(u > 0.0 && u.is_finite())) {
        return input("weight vectors must be strictly positive");
    }
    if s.iter().chain(s2).any(|&i| i >= n) {
        return input("index set out of range");
    }
    let lhs = ksum(s.iter().flat_map(|&i| s2.iter().map(move |&j| a[i][j] * x[i] * x[j])));
    let nv = ksum(s.iter().map(|&i| v[i] * x[i].abs()));
    let nw = ksum(s2.iter().map(|&j| w[j] * x[j].abs()));
    let ratio = s.iter().flat_map(|&i| s2.iter().map(move |&j| a[i][j].abs() / (v[i] * w[j]))).fold(0.0f64, f64::max);
    Ok(InequalityCheck::new(lhs, nv * nw * ratio))
}

/// `‖x‖_β^β ≤ ‖x‖₁^β n^{1−β}` and `‖x‖_p^p ≤ ‖x‖_q^q ‖x‖_∞^{p−q}`.
pub fn check_holder_corollary(x: &[f64], beta: f64, p: f64, q: f64) -> Result<(InequalityCheck, InequalityCheck)> {
    check_beta(beta, 0.0)?;
    if !(q > 0.0 && p >= q && p.is_finite()) {
        return input(format!("requires p ≥ q > 0, got p = {p}, q = {q}"));
    }
    if x.is_empty() || x.iter().any(|v| !v.is_finite()) {
        return input("vector must be nonempty and finite");
    }
    let n = x.len() as f64;
    let a: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    let l1 = ksum(a.iter().copied());
    let first = InequalityCheck::new(ksum(a.iter().map(|v| v.powf(beta))), l1.powf(beta) * n.powf(1.0 - beta));
    let inf = a.iter().copied().fold(0.0f64, f64::max);
    let second = InequalityCheck::new(ksum(a.iter().map(|v| v.powf(p))), ksum(a.iter().map(|v| v.powf(q))) * inf.powf(p - q));
    Ok((first, second))
}

/// Sample moments with jackknife standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub trials: u64,
    pub mean: f64,
    pub second_moment: f64,
    /// `E[Z²]/E[Z]² − 1`
    pub relative_variance: f64,
    pub se_mean: f64,
    pub se_second_moment: f64,
    pub se_relative_variance: f64,
}

impl Moments {
    /// `E[Z²]/E[Z]²`, the quantity bounded by `V(μ)`.
    pub fn relative_second_moment(&self) -> f64 {
        self.relative_variance + 1.0
    }
}

pub fn empirical_moments<S: Sampler>(sampler: &mut S, trials: u64) -> Result<Moments> {
    if trials < 2 {
        return input("at least two trials are required");
    }
    let zs = (0..trials).map(|_| sampler.sample()).collect::<Result<Vec<f64>>>()?;
    Ok(moments_of(&zs))
}

pub fn moments_of(zs: &[f64]) -> Moments {
    let n = zs.len() as f64;
    let s1 = ksum(zs.iter().copied());
    let s2 = ksum(zs.iter().map(|z| z * z));
    let mean = s1 / n;
    let second = s2 / n;
    let rel = |m1: f64, m2: f64| if m1 == 0.0 { 0.0 } else { m2 / (m1 * m1) - 1.0 };
    let relative_variance = rel(mean, second);
    // Leave-one-out replicates.
    let k = n - 1.0;
    let mut a = KahanSum::new();
    let mut b = KahanSum::new();
    let mut c = KahanSum::new();
    let reps: Vec<(f64, f64, f64)> = zs
        .iter()
        .map(|z| {
            let m1 = (s1 - z) / k;
            let m2 = (s2 - z * z) / k;
            (m1, m2, rel(m1, m2))
        })
        .collect();
    let avg = reps.iter().fold((0.0, 0.0, 0.0), |acc, r| (acc.0 + r.0 / n, acc.1 + r.1 / n, acc.2 + r.2 / n));
    for r in &reps {
        a.add((r.0 - avg.0).powi(2));
        b.add((r.1 - avg.1).powi(2));
        c.add((r.2 - avg.2).powi(2));
    }
    let f = k / n;
    Moments {
        trials: zs.len() as u64,
        mean,
        second_moment: second,
        relative_variance,
        se_mean: (f * a.value()).sqrt(),
        se_second_moment: (f * b.value()).sqrt(),
        se_relative_variance: (f * c.value()).sqrt(),
    }
}

/// Fraction of freshly sampled hash functions that put `x` and `y` in the same bucket.
pub fn empirical_collision_rate(family: &HashFamilySpec, x: &[f64], y: &[f64], trials: u64, rng: &mut Rng) -> Result<(f64, f64)> {
    if trials == 0 {
        return input("at least one trial is required");
    }
    if x.len() != y.len() || x.is_empty() {
        return input("points must have equal, positive dimension");
    }
    let pair = PointSet::from_rows(&[x.to_vec(), y.to_vec()])?;
    let mut hits = 0u64;
    for _ in 0..trials {
        let mut sub = stream(rng.random(), TAG_VERIFY, 0);
        let hash = TableHash::sample(family, &pair, &mut sub)?;
        if hash.fingerprint(x, 0) == hash.fingerprint(y, 1) {
            hits += 1;
        }
    }
    let rate = hits as f64 / trials as f64;
    Ok((rate, (rate * (1.0 - rate) / trials as f64).sqrt()))
}

/// Aggregate of one randomized sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckSummary {
    pub name: String,
    pub instances: u64,
    pub violations: u64,
    pub worst_slack: f64,
}

impl CheckSummary {
    pub fn new(name: &str) -> Self {
        Self { name: name.into(), instances: 0, violations: 0, worst_slack: f64::INFINITY }
    }

    pub fn record(&mut self, c: &InequalityCheck) {
        self.instances += 1;
        if !c.holds {
            self.violations += 1;
        }
        let scaled = c.slack / c.rhs.abs().max(1.0);
        self.worst_slack = self.worst_slack.min(scaled);
    }

    fn record_tight(&mut self, c: &InequalityCheck) {
        self.instances += 1;
        if !c.is_tight() {
            self.violations += 1;
        }
        self.worst_slack = self.worst_slack.min(-(c.lhs - c.rhs).abs() / c.rhs.abs().max(1.0));
    }

    pub fn passed(&self) -> bool {
        self.violations == 0 && self.instances > 0
    }
}

fn random_vector(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = 10f64.powf(rng.random_range(-3.0..1.0));
            if rng.random::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

/// Randomized sweeps of all three inequalities plus their equality cases.
pub fn run_inequality_suite(seed: u64, instances: u64) -> Result<Vec<CheckSummary>> {
    let mut rng = stream(seed, TAG_VERIFY, 1);
    let mut mono = CheckSummary::new("monotone_holder");
    let mut two = CheckSummary::new("two_sided_holder");
    let mut cor1 = CheckSummary::new("holder_corollary_power_mean");
    let mut cor2 = CheckSummary::new("holder_corollary_interpolation");
    let mut eq = CheckSummary::new("equality_cases");
    for _ in 0..instances {
        let n = rng.random_range(1..=50);
        let mut x = random_vector(&mut rng, n);
        x.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
        let beta = rng.random_range(0.5..=1.0);
        mono.record(&check_monotone_holder(&x, beta)?);

        let n = rng.random_range(1..=20);
        let a: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..2.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..2.0)).collect();
        let s: Vec<usize> = (0..n).filter(|_| rng.random::<bool>()).collect();
        let s2: Vec<usize> = (0..n).filter(|_| rng.random::<bool>()).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        two.record(&check_two_sided_holder(&a, &v, &w, &s, &s2, &x)?);

        let n = rng.random_range(1..=50);
        let x = random_vector(&mut rng, n);
        let q = rng.random_range(0.1..4.0);
        let p = q + rng.random_range(0.0..4.0);
        let (c1, c2) = check_holder_corollary(&x, rng.random_range(0.0..=1.0), p, q)?;
        cor1.record(&c1);
        cor2.record(&c2);
    }
    for beta in [0.5, 0.6, 0.75, 0.9, 1.0] {
        eq.record_tight(&check_monotone_holder(&[0.3; 5], beta)?);
        eq.record_tight(&check_monotone_holder(&[0.7], beta)?);
        eq.record_tight(&check_holder_corollary(&[1.0; 7], beta, 2.0, 1.0)?.0);
    }
    let mut spike = vec![0.0; 6];
    spike[0] = 1.0;
    eq.record_tight(&check_holder_corollary(&spike, 0.5, 3.0, 1.5)?.1);
    Ok(vec![mono, two, cor1, cor2, eq])
}

/// Collision-probability sandwiches: line-partition bounds on a grid of their
/// validity region, and the scale-free certificates of the exponential and
/// t-Student schemes on `[0, R]`.
pub fn run_sandwich_suite() -> Result<Vec<CheckSummary>> {
    let mut line = CheckSummary::new("euclidean_collision_bounds");
    for delta in [0.05, 0.1, 0.2, 0.3, 0.4, 0.5] {
        let cmax = f64::min(delta, 1.0 / (2.0 * (1.0 / delta as f64).ln()).sqrt());
        for k in 0..100 {
            let c = cmax * k as f64 / 99.0;
            let b = collision_prob_euclidean_bounds(c, delta)?;
            let p = p1(c);
            line.record(&InequalityCheck::new(b.lower, p));
            line.record(&InequalityCheck::new(p, b.upper));
        }
    }
    let sandwich = |name: &str, scheme: &HbeScheme, r_max: f64| {
        let mut s = CheckSummary::new(name);
        let beta = scheme.beta.unwrap_or(1.0);
        for k in 0..=200 {
            let r = r_max * k as f64 / 200.0;
            let target = (beta * scheme.kernel.ln_profile(r)).exp();
            let p = scheme.prob.prob(r);
            s.record(&InequalityCheck::new(target / scheme.m, p));
            s.record(&InequalityCheck::new(p, scheme.m * target));
        }
        s
    };
    let mut rows = vec![line];
    for (r, beta) in [(1.0, 0.5), (4.0, 0.5), (4.0, 1.0), (10.0, 0.25)] {
        rows.push(sandwich(&format!("exponential_scale_free_r{r}_b{beta}"), &make_exponential_hbe(r, beta)?, r));
    }
    for (p, q) in [(2, 1), (2, 2), (3, 1), (4, 3)] {
        rows.push(sandwich(&format!("student_scale_free_p{p}_q{q}"), &make_student_hbe(p, q)?, 50.0));
    }
    Ok(rows)
}

/// CSV with columns `check,instances,violations,worst_slack`.
pub fn write_report<W: Write>(mut out: W, rows: &[CheckSummary]) -> Result<()> {
    writeln!(out, "check,instances,violations,worst_slack")?;
    for r in rows {
        writeln!(out, "{},{},{},{:e}", r.name, r.instances, r.violations, r.worst_slack)?;
    }
    Ok(())
}
