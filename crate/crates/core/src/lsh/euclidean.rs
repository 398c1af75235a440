use rand::Rng;
use rand_distr::StandardNormal;

use super::{mix_key, CollisionBound};
use crate::error::{domain, input, Result};
use crate::numeric::erf;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Concatenation of `D` random line partitions `⌈(gᵀx + b)/w⌉`.
#[derive(Debug, Clone, PartialEq)]
pub struct EuclideanHash {
    w: f64,
    d: usize,
    dirs: Vec<f64>,
    offsets: Vec<f64>,
}

impl EuclideanHash {
    pub fn from_parts(w: f64, d: usize, dirs: Vec<f64>, offsets: Vec<f64>) -> Result<Self> {
        if !(w > 0.0 && w.is_finite()) || d == 0 || offsets.is_empty() || dirs.len() != d * offsets.len() {
            return input("inconsistent Euclidean hash parameters");
        }
        Ok(Self { w, d, dirs, offsets })
    }

    pub fn width(&self) -> f64 {
        self.w
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn concat(&self) -> usize {
        self.offsets.len()
    }

    pub fn directions(&self) -> &[f64] {
        &self.dirs
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn direction(&self, k: usize) -> &[f64] {
        &self.dirs[k * self.d..(k + 1) * self.d]
    }

    #[inline]
    pub fn component(&self, k: usize, x: &[f64]) -> i64 {
        let g = self.direction(k);
        let mut dot = 0.0;
        for (gi, xi) in g.iter().zip(x) {
            dot += gi * xi;
        }
        ((dot + self.offsets[k]) / self.w).ceil() as i64
    }

    /// Bucket key, one integer per concatenated function. No dimension check.
    pub fn key(&self, x: &[f64]) -> Vec<i64> {
        (0..self.concat()).map(|k| self.component(k, x)).collect()
    }

    /// 64-bit fingerprint of the bucket key.
    #[inline]
    pub fn fingerprint(&self, x: &[f64]) -> u64 {
        let mut h = 0x5851_f42d_4c95_7f2d;
        for k in 0..self.concat() {
            h = mix_key(h, self.component(k, x) as u64);
        }
        h
    }
}

/// Draws `D` independent pairs `g ~ N(0, I_d)`, `b ~ U[0, w]`.
pub fn sample_euclidean<R: Rng + ?Sized>(w: f64, concat: usize, d: usize, rng: &mut R) -> Result<EuclideanHash> {
    if !(w > 0.0 && w.is_finite()) {
        return input(format!("bucket width must be positive, got {w}"));
    }
    if concat == 0 || d == 0 {
        return input("concatenation count and dimension must be at least 1");
    }
    let mut h = EuclideanHash { w, d, dirs: Vec::with_capacity(concat * d), offsets: Vec::with_capacity(concat) };
    h.redraw(concat, rng);
    Ok(h)
}

impl EuclideanHash {
    /// Replaces the functions in place with `concat` fresh ones, drawn as [`sample_euclidean`] draws them.
    pub(crate) fn redraw<R: Rng + ?Sized>(&mut self, concat: usize, rng: &mut R) {
        self.dirs.clear();
        self.offsets.clear();
        for _ in 0..concat {
            for _ in 0..self.d {
                self.dirs.push(rng.sample::<f64, _>(StandardNormal));
            }
            self.offsets.push(rng.random::<f64>() * self.w);
        }
    }
}

pub fn eval_euclidean(h: &EuclideanHash, x: &[f64]) -> Result<Vec<i64>> {
    if x.len() != h.d {
        return input(format!("dimension mismatch: hash {} vs point {}", h.d, x.len()));
    }
    Ok(h.key(x))
}

/// Collision probability of one line partition at normalized distance `c = r/w`,
/// without argument checks.
#[inline]
pub fn p1(c: f64) -> f64 {
    if c <= 0.0 {
        return 1.0;
    }
    if c < 1e-8 {
        return 1.0 - SQRT_2_OVER_PI * c;
    }
    // 1 − 2Φ(1/c) written as erf(1/(c√2)) to avoid cancellation for large c.
    let v = erf(1.0 / (c * std::f64::consts::SQRT_2)) + SQRT_2_OVER_PI * c * (-0.5 / (c * c)).exp_m1();
    v.clamp(0.0, 1.0)
}

pub fn collision_prob_euclidean(c: f64) -> Result<f64> {
    if !(c >= 0.0) {
        return domain(format!("normalized distance must be nonnegative, got {c}"));
    }
    Ok(p1(c))
}

/// Exponential bracket on `p₁(c)`, valid for `δ ≤ 1/2` and `c ≤ min(δ, 1/√(2 ln(1/δ)))`.
pub fn collision_prob_euclidean_bounds(c: f64, delta: f64) -> Result<CollisionBound> {
    if !(delta > 0.0 && delta <= 0.5) {
        return domain(format!("δ must lie in (0, 1/2], got {delta}"));
    }
    let cmax = delta.min(1.0 / (2.0 * (1.0 / delta).ln()).sqrt());
    if !(c >= 0.0 && c <= cmax) {
        return domain(format!("c = {c} outside [0, {cmax}] for δ = {delta}"));
    }
    Ok(CollisionBound {
        lower: (-SQRT_2_OVER_PI * (1.0 + delta) * c).exp(),
        upper: (-SQRT_2_OVER_PI * (1.0 - delta.powi(3)) * c).exp(),
    })
}

/// Partial sum of the large-`c` expansion of `p₁(c)` using the first `terms` terms.
pub fn collision_prob_euclidean_series(c: f64, terms: usize) -> Result<f64> {
    if !(c > 1.0) {
        return domain(format!("series requires c > 1, got {c}"));
    }
    if terms == 0 {
        return domain("at least one term is required");
    }
    let inv2 = 1.0 / (c * c);
    let mut power = 1.0 / c;
    let mut fact_pow = 1.0; // 2^k k!
    let mut sum = 0.0;
    for k in 0..terms {
        let kf = k as f64;
        if k > 0 {
            fact_pow *= 2.0 * kf;
            power *= inv2;
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * power / (fact_pow * (2.0 * kf + 2.0) * (2.0 * kf + 1.0));
    }
    Ok(SQRT_2_OVER_PI * sum)
}
