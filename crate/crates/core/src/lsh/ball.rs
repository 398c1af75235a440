//! Ball-carving hashing: random projection to `t` dimensions, then balls of
//! radius `w` carved around a sequence of random centers.
//!
//! Centers are drawn uniformly from a region `Ω` (a ball around the projected
//! data) and a point belongs to the first center whose ball contains it. For
//! any two points whose `w`-balls lie inside `Ω`, the collision probability
//! given the projection is exactly `L/(2 − L)` where `L` is the volume
//! fraction of the lens between the two balls, independent of `Ω`.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{mix_key, CollisionBound};
use crate::error::{domain, input, HbeError, Result};
use crate::kernels::PointSet;
use crate::numeric::{beta_reg, chi_square_pdf, integrate};
use crate::seed::{stream, TAG_CENTERS};

const CHUNK: usize = 64;
/// Hard cap on centers per copy.
pub const MAX_CENTERS: usize = 1_000_000;
/// Probability that a point is left uncovered is at most `MISS / n_hint`.
const MISS: f64 = 1e-12;
const SINGLETON: u64 = 1 << 63;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallCarvingParams {
    /// Projection dimension.
    pub t: usize,
    /// Ball radius.
    pub w: f64,
    /// Number of concatenated copies.
    pub concat: usize,
    /// Relative margin added to the projected data radius when sizing `Ω`.
    pub slack: f64,
    /// Expected number of points hashed, sizes the center cap.
    pub n_hint: usize,
}

impl BallCarvingParams {
    pub fn validate(&self) -> Result<()> {
        if self.t < 2 {
            return input(format!("projection dimension must be at least 2, got {}", self.t));
        }
        if !(self.w > 0.0 && self.w.is_finite()) || self.concat == 0 || !(self.slack >= 0.0) {
            return input("ball carving needs w > 0, D ≥ 1 and slack ≥ 0");
        }
        Ok(())
    }
}

/// One concatenated copy: projection, region and lazily generated centers.
#[derive(Debug)]
pub struct CarvingCopy {
    t: usize,
    d: usize,
    w: f64,
    projection: Vec<f64>,
    origin: Vec<f64>,
    radius: f64,
    seed: u64,
    max_centers: usize,
    chunks: Vec<OnceLock<Vec<f64>>>,
}

impl Clone for CarvingCopy {
    fn clone(&self) -> Self {
        Self::from_parts(self.t, self.d, self.w, self.projection.clone(), self.origin.clone(), self.radius, self.seed, self.max_centers)
            .expect("cloning a valid copy")
    }
}

impl PartialEq for CarvingCopy {
    fn eq(&self, o: &Self) -> bool {
        self.t == o.t
            && self.d == o.d
            && self.w == o.w
            && self.projection == o.projection
            && self.origin == o.origin
            && self.radius == o.radius
            && self.seed == o.seed
            && self.max_centers == o.max_centers
    }
}

impl CarvingCopy {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        t: usize,
        d: usize,
        w: f64,
        projection: Vec<f64>,
        origin: Vec<f64>,
        radius: f64,
        seed: u64,
        max_centers: usize,
    ) -> Result<Self> {
        if projection.len() != t * d || origin.len() != t || !(radius >= w) || max_centers == 0 || max_centers > MAX_CENTERS {
            return input("inconsistent ball carving copy");
        }
        let n_chunks = max_centers.div_ceil(CHUNK);
        Ok(Self { t, d, w, projection, origin, radius, seed, max_centers, chunks: (0..n_chunks).map(|_| OnceLock::new()).collect() })
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }
    pub fn origin(&self) -> &[f64] {
        &self.origin
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn max_centers(&self) -> usize {
        self.max_centers
    }

    pub fn project(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.projection[r * self.d..(r + 1) * self.d];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// Whether the `w`-ball around the projected point lies inside the region.
    pub fn contains_projected(&self, px: &[f64]) -> bool {
        let dist = px.iter().zip(&self.origin).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        dist + self.w <= self.radius * (1.0 + 1e-12)
    }

    fn chunk(&self, j: usize) -> &[f64] {
        self.chunks[j].get_or_init(|| {
            let mut rng = stream(self.seed, TAG_CENTERS, j as u64);
            let count = CHUNK.min(self.max_centers - j * CHUNK);
            let mut out = Vec::with_capacity(count * self.t);
            let mut dir = vec![0.0; self.t];
            for _ in 0..count {
                let mut norm2 = 0.0;
                for v in dir.iter_mut() {
                    *v = rng.sample::<f64, _>(StandardNormal);
                    norm2 += *v * *v;
                }
                let scale = self.radius * rng.random::<f64>().powf(1.0 / self.t as f64) / norm2.sqrt();
                out.extend(dir.iter().zip(&self.origin).map(|(v, o)| o + v * scale));
            }
            out
        })
    }

    /// Center `k` of the sequence.
    pub fn center(&self, k: usize) -> &[f64] {
        let c = self.chunk(k / CHUNK);
        let i = k % CHUNK;
        &c[i * self.t..(i + 1) * self.t]
    }

    /// Index of the first center covering the projected point, if any.
    pub fn first_cover(&self, px: &[f64]) -> Option<usize> {
        let w2 = self.w * self.w;
        for j in 0..self.chunks.len() {
            let c = self.chunk(j);
            for (i, center) in c.chunks_exact(self.t).enumerate() {
                let mut s = 0.0;
                for (a, b) in center.iter().zip(px) {
                    s += (a - b) * (a - b);
                }
                if s <= w2 {
                    return Some(j * CHUNK + i);
                }
            }
        }
        None
    }
}

/// `D` independent carving copies.
#[derive(Debug, Clone, PartialEq)]
pub struct BallCarvingHash {
    t: usize,
    w: f64,
    d: usize,
    copies: Vec<CarvingCopy>,
}

impl BallCarvingHash {
    pub fn from_copies(t: usize, w: f64, d: usize, copies: Vec<CarvingCopy>) -> Result<Self> {
        if copies.is_empty() || copies.iter().any(|c| c.t != t || c.d != d || c.w != w) {
            return input("inconsistent ball carving copies");
        }
        Ok(Self { t, w, d, copies })
    }

    pub fn t(&self) -> usize {
        self.t
    }
    pub fn width(&self) -> f64 {
        self.w
    }
    pub fn dim(&self) -> usize {
        self.d
    }
    pub fn copies(&self) -> &[CarvingCopy] {
        &self.copies
    }

    /// Per-copy key: the covering center's index, or a singleton token derived from `point_id`.
    pub fn key(&self, x: &[f64], point_id: u64) -> Vec<u64> {
        let mut px = vec![0.0; self.t];
        self.copies
            .iter()
            .map(|c| {
                c.project(x, &mut px);
                match c.first_cover(&px) {
                    Some(k) => k as u64,
                    None => SINGLETON | point_id,
                }
            })
            .collect()
    }

    pub fn fingerprint(&self, x: &[f64], point_id: u64) -> u64 {
        let mut h = 0x2d35_8dcc_aa6c_78a5;
        for k in self.key(x, point_id) {
            h = mix_key(h, k);
        }
        h
    }

    /// Whether every copy's region contains the `w`-ball of `x`.
    pub fn covers(&self, x: &[f64]) -> bool {
        let mut px = vec![0.0; self.t];
        self.copies.iter().all(|c| {
            c.project(x, &mut px);
            c.contains_projected(&px)
        })
    }
}

/// Samples a ball-carving hash whose regions enclose the projected `points`.
pub fn sample_ball_carving<R: Rng + ?Sized>(params: &BallCarvingParams, points: &PointSet, rng: &mut R) -> Result<BallCarvingHash> {
    params.validate()?;
    let (t, d, w) = (params.t, points.d(), params.w);
    let scale = 1.0 / (t as f64).sqrt();
    let centroid = points.centroid();
    let cover_log = (params.n_hint.max(1) as f64 / MISS).ln();
    let mut copies = Vec::with_capacity(params.concat);
    let mut px = vec![0.0; t];
    for _ in 0..params.concat {
        let projection: Vec<f64> = (0..t * d).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect();
        let mut origin = vec![0.0; t];
        for (r, o) in origin.iter_mut().enumerate() {
            *o = projection[r * d..(r + 1) * d].iter().zip(&centroid).map(|(a, b)| a * b).sum();
        }
        let mut rho = 0.0f64;
        for p in points.iter() {
            for (r, v) in px.iter_mut().enumerate() {
                *v = projection[r * d..(r + 1) * d].iter().zip(p).map(|(a, b)| a * b).sum();
            }
            let dist = px.iter().zip(&origin).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            rho = rho.max(dist);
        }
        let radius = w + (1.0 + params.slack) * rho;
        let needed = ((radius / w).powi(t as i32) * cover_log).ceil();
        if !(needed <= MAX_CENTERS as f64) {
            return Err(HbeError::Config(format!(
                "ball carving with t = {t} needs {needed:.3e} centers per copy (cap {MAX_CENTERS}); reduce t or the data radius relative to w"
            )));
        }
        let seed = rng.random::<u64>();
        copies.push(CarvingCopy::from_parts(t, d, w, projection, origin, radius, seed, needed as usize)?);
    }
    BallCarvingHash::from_copies(t, w, d, copies)
}

pub fn eval_ball_carving(h: &BallCarvingHash, x: &[f64], point_id: u64) -> Result<Vec<u64>> {
    if x.len() != h.d {
        return input(format!("dimension mismatch: hash {} vs point {}", h.d, x.len()));
    }
    Ok(h.key(x, point_id))
}

/// Volume fraction of the lens between two radius-`w` balls whose centers are `s·w` apart.
fn lens_fraction(t: usize, s: f64) -> f64 {
    if s >= 2.0 {
        return 0.0;
    }
    beta_reg((t as f64 + 1.0) / 2.0, 0.5, 1.0 - s * s / 4.0)
}

fn chi_square_upper_limit(t: usize) -> f64 {
    // P[X > a t] ≤ exp(−(a − ln a − 1) t/2); pick a with exponent ≥ 45.
    let mut a = 2.0f64;
    while (a - a.ln() - 1.0) * t as f64 / 2.0 < 45.0 {
        a *= 1.25;
    }
    a * t as f64
}

/// Exact per-copy collision probability `p_t(c)` at normalized distance `c = r/w`.
pub fn collision_prob_ball(t: usize, c: f64) -> f64 {
    if c <= 0.0 {
        return 1.0;
    }
    let hi = (4.0 * t as f64 / (c * c)).min(chi_square_upper_limit(t));
    let tf = t as f64;
    let f = |x: f64| {
        let l = lens_fraction(t, (x / tf).sqrt() * c);
        chi_square_pdf(t, x) * l / (2.0 - l)
    };
    let rough = integrate(&f, 0.0, hi, 1e-9);
    let tol = (rough * 1e-12).max(1e-300);
    integrate(&f, 0.0, hi, tol).clamp(0.0, 1.0)
}

/// Bracket on `p_t(c)`, valid for `t ≥ 12` and `16/(t+7) ≤ c² ≤ 1`.
pub fn collision_prob_ball_bounds(t: usize, c: f64) -> Result<CollisionBound> {
    if t < 12 {
        return domain(format!("bounds require t ≥ 12, got {t}"));
    }
    let tf = t as f64;
    let c2 = c * c;
    if !(c2 >= 16.0 / (tf + 7.0) * (1.0 - 1e-12) && c2 <= 1.0) {
        return domain(format!("c = {c} outside [{}, 1] for t = {t}", (16.0 / (tf + 7.0)).sqrt()));
    }
    let st = tf.sqrt();
    let main = (-(tf - 1.0) / 8.0 * c2).exp();
    let lower = (1.0 / (4.0 * st * c)) * (1.0 - 2.0 * (-9.0 * tf / 100.0).exp()) * (-(tf - 1.0) / 8.0 * c2 * c2 / (2.0 - c2)).exp() * main;
    let upper = (3.0 / (st * c)) * (1.0 + st * c / 3.0 * (-9.0 * tf / 64.0).exp()) * ((tf - 1.0) / 64.0 * c2 * c2).exp() * main;
    Ok(CollisionBound { lower, upper })
}

/// Tabulated `p_t(c)` on `[0, c_max]`, interpolated in log space.
#[derive(Debug, Clone)]
pub struct BallCollisionTable {
    t: usize,
    c_max: f64,
    step: f64,
    ln_p: Vec<f64>,
}

const TABLE_INTERVALS: usize = 2048;

impl BallCollisionTable {
    pub fn new(t: usize, c_max: f64) -> Self {
        let c_max = c_max.max(1e-6);
        let step = c_max / TABLE_INTERVALS as f64;
        let ln_p = (0..=TABLE_INTERVALS + 2).map(|i| collision_prob_ball(t, i as f64 * step).ln()).collect();
        Self { t, c_max, step, ln_p }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn c_max(&self) -> f64 {
        self.c_max
    }

    pub fn eval(&self, c: f64) -> f64 {
        if c <= 0.0 {
            return 1.0;
        }
        if c > self.c_max {
            return collision_prob_ball(self.t, c);
        }
        let u = c / self.step;
        let i = (u.floor() as usize).clamp(1, TABLE_INTERVALS);
        let x = u - i as f64;
        // Cubic Lagrange through nodes i−1 .. i+2.
        let (a, b, cc, d) = (self.ln_p[i - 1], self.ln_p[i], self.ln_p[i + 1], self.ln_p[i + 2]);
        let v = -x * (x - 1.0) * (x - 2.0) / 6.0 * a + (x + 1.0) * (x - 1.0) * (x - 2.0) / 2.0 * b
            - (x + 1.0) * x * (x - 2.0) / 2.0 * cc
            + (x + 1.0) * x * (x - 1.0) / 6.0 * d;
        v.exp().min(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    #[test]
    fn lens_limits() {
        assert!((lens_fraction(12, 0.0) - 1.0).abs() < 1e-15);
        assert_eq!(lens_fraction(12, 2.0), 0.0);
        // In the plane the lens area has a closed form.
        let s: f64 = 0.7;
        let h = s / 2.0;
        let area = 2.0 * (h.acos() - h * (1.0 - h * h).sqrt());
        assert!((lens_fraction(2, s) - area / std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn exact_probability_sits_inside_bounds() {
        for t in [12usize, 20, 40] {
            let lo = (16.0 / (t as f64 + 7.0)).sqrt();
            for i in 0..=8 {
                let c = lo + (1.0 - lo) * i as f64 / 8.0;
                let b = collision_prob_ball_bounds(t, c).unwrap();
                let p = collision_prob_ball(t, c);
                assert!(b.contains(p), "t={t} c={c} p={p} {b:?}");
            }
        }
    }

    #[test]
    fn reference_probability() {
        // Independent evaluation of the same integral at t = 12, c = 1.
        assert!((collision_prob_ball(12, 1.0) - 0.046_203_283_230_887).abs() < 1e-10);
        assert_eq!(collision_prob_ball(12, 0.0), 1.0);
    }

    #[test]
    fn upper_bound_decreases() {
        let a = collision_prob_ball_bounds(20, 1.0).unwrap().upper;
        let b = collision_prob_ball_bounds(20, 0.8).unwrap().upper;
        assert!(a < b);
        assert!(collision_prob_ball_bounds(11, 1.0).is_err());
        assert!(collision_prob_ball_bounds(12, 0.5).is_err());
    }

    #[test]
    fn table_matches_direct_quadrature() {
        let table = BallCollisionTable::new(12, 0.8);
        for i in 0..40 {
            let c = 0.013 + i as f64 * 0.0197;
            let direct = collision_prob_ball(12, c);
            assert!((table.eval(c) / direct - 1.0).abs() < 1e-9, "c={c}");
        }
    }

    #[test]
    fn identical_points_share_keys() {
        let pts = PointSet::new(vec![0.0, 0.0, 0.3, 0.1, -0.2, 0.2], 2).unwrap();
        let params = BallCarvingParams { t: 4, w: 1.0, concat: 3, slack: 0.25, n_hint: 3 };
        let h = sample_ball_carving(&params, &pts, &mut rng_from_seed(3)).unwrap();
        let a = eval_ball_carving(&h, &[0.3, 0.1], 1).unwrap();
        let b = eval_ball_carving(&h, &[0.3, 0.1], 2).unwrap();
        assert_eq!(a, b);
        assert!(h.covers(pts.point(0)));
        let again = sample_ball_carving(&params, &pts, &mut rng_from_seed(3)).unwrap();
        assert_eq!(h, again);
    }

    #[test]
    fn point_at_first_center_gets_key_zero() {
        let pts = PointSet::new(vec![0.0, 0.0, 0.5, 0.5], 2).unwrap();
        let params = BallCarvingParams { t: 2, w: 1.0, concat: 1, slack: 0.0, n_hint: 2 };
        let h = sample_ball_carving(&params, &pts, &mut rng_from_seed(1)).unwrap();
        let copy = &h.copies()[0];
        let c0 = copy.center(0).to_vec();
        assert_eq!(copy.first_cover(&c0), Some(0));
    }

    #[test]
    fn oversized_regions_are_rejected() {
        let pts = PointSet::new(vec![0.0, 100.0], 1).unwrap();
        let params = BallCarvingParams { t: 12, w: 1.0, concat: 1, slack: 0.0, n_hint: 10 };
        let err = sample_ball_carving(&params, &pts, &mut rng_from_seed(1)).unwrap_err();
        assert!(err.to_string().contains("t = 12"));
    }
}
