//! Kernel-specific estimator parameterizations: hash family, collision
//! probability as a function of distance, and relative-variance model.

use std::f64::consts::{E, PI};
use std::sync::Arc;

use crate::error::{domain, input, Result};
use crate::kernels::{KernelKind, KernelSpec};
use crate::lsh::{p1, BallCollisionTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Exponential,
    Student,
    GaussianEuclid,
    GaussianBall,
}

impl SchemeKind {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::Exponential => "hbe-exp",
            SchemeKind::Student => "hbe-student",
            SchemeKind::GaussianEuclid => "hbe-gauss-euclid",
            SchemeKind::GaussianBall => "hbe-gauss-ball",
        }
    }
}

/// Parameters of one hash function drawn per table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HashFamilySpec {
    Euclidean { w: f64, concat: usize },
    BallCarving { t: usize, w: f64, concat: usize, slack: f64 },
}

impl HashFamilySpec {
    pub fn concat(&self) -> usize {
        match *self {
            HashFamilySpec::Euclidean { concat, .. } | HashFamilySpec::BallCarving { concat, .. } => concat,
        }
    }

    pub fn width(&self) -> f64 {
        match *self {
            HashFamilySpec::Euclidean { w, .. } | HashFamilySpec::BallCarving { w, .. } => w,
        }
    }
}

/// Collision probability of the concatenated family as a function of distance.
#[derive(Debug, Clone)]
pub enum ProbFn {
    Euclidean { w: f64, concat: usize },
    Ball { w: f64, concat: usize, table: Arc<BallCollisionTable> },
}

impl ProbFn {
    pub fn ln_prob(&self, r: f64) -> f64 {
        match self {
            ProbFn::Euclidean { w, concat } => *concat as f64 * p1(r / w).ln(),
            ProbFn::Ball { w, concat, table } => *concat as f64 * table.eval(r / w).ln(),
        }
    }

    pub fn prob(&self, r: f64) -> f64 {
        self.ln_prob(r).exp()
    }
}

/// Relative-variance bound `V(μ)`, always clamped at the random-sampling value `1/μ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarianceModel {
    /// `4 M³ μ^{−β}`
    ScaleFree { beta: f64, m: f64 },
    /// `4 e^{3/2} μ^{−γ²+γ−1}` with `γ = t/√ln(1/μ)`
    GaussianEuclid { t: f64 },
    /// `1/μ`
    RandomSampling,
    /// `3/μ²`, second moment of the random Fourier feature estimator is at most 3.
    Fourier,
}

impl VarianceModel {
    pub fn relative(&self, mu: f64) -> f64 {
        let mu = mu.clamp(f64::MIN_POSITIVE, 1.0);
        let rs = 1.0 / mu;
        match *self {
            VarianceModel::ScaleFree { beta, m } => (4.0 * m.powi(3) * mu.powf(-beta)).min(rs),
            VarianceModel::GaussianEuclid { t } => {
                let l = -mu.ln();
                if l <= 0.0 {
                    return rs;
                }
                let g = t / l.sqrt();
                (4.0 * E.powf(1.5) * mu.powf(-g * g + g - 1.0)).min(rs)
            }
            VarianceModel::RandomSampling => rs,
            VarianceModel::Fourier => 3.0 * rs * rs,
        }
    }
}

/// A fully specified hashing-based estimator for one kernel family.
#[derive(Debug, Clone)]
pub struct HbeScheme {
    pub kind: SchemeKind,
    /// Kernel at unit bandwidth.
    pub kernel: KernelSpec,
    pub family: HashFamilySpec,
    pub prob: ProbFn,
    /// Scale exponent, absent for the Gaussian scheme built on line partitions.
    pub beta: Option<f64>,
    /// Distortion factor of the collision-probability sandwich.
    pub m: f64,
    /// Diameter bound (unit bandwidth) the parameters were chosen for.
    pub radius: f64,
    pub variance: VarianceModel,
    /// Scalar projections per hashed point and coordinate.
    pub complexity: f64,
}

impl HbeScheme {
    /// Checks that the scheme matches `kernel` and covers data of diameter `radius`.
    pub fn check_compatible(&self, kernel: &KernelSpec, radius: f64) -> Result<()> {
        let ok = match (self.kind, kernel.kind) {
            (SchemeKind::Exponential, KernelKind::Exponential) => true,
            (SchemeKind::Student, KernelKind::TStudent { p }) => p == self.kernel_p(),
            (SchemeKind::GaussianEuclid | SchemeKind::GaussianBall, KernelKind::Gaussian) => true,
            _ => false,
        };
        if !ok {
            return input(format!("scheme {} does not apply to kernel {}", self.kind.name(), kernel.name()));
        }
        if radius > self.radius * (1.0 + 1e-12) {
            return domain(format!(
                "scheme {} was built for diameter {} but the data needs {radius}",
                self.kind.name(),
                self.radius
            ));
        }
        Ok(())
    }

    fn kernel_p(&self) -> u32 {
        match self.kernel.kind {
            KernelKind::TStudent { p } => p,
            _ => 0,
        }
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return domain(format!("scale exponent β must lie in (0, 1], got {beta}"));
    }
    Ok(())
}

fn check_radius(r: f64) -> Result<()> {
    if !(r > 0.0 && r.is_finite()) {
        return input(format!("diameter bound must be positive and finite, got {r}"));
    }
    Ok(())
}

/// Exponential kernel: `D = ⌈√(2π) R⌉²`, `w = D/(β√(π/2))`, `M = √e`.
pub fn make_exponential_hbe(r: f64, beta: f64) -> Result<HbeScheme> {
    check_radius(r)?;
    check_beta(beta)?;
    let root = ((2.0 * PI).sqrt() * r).ceil();
    let concat = (root * root) as usize;
    let w = concat as f64 / (beta * (PI / 2.0).sqrt());
    Ok(HbeScheme {
        kind: SchemeKind::Exponential,
        kernel: KernelSpec::exponential(1.0),
        family: HashFamilySpec::Euclidean { w, concat },
        prob: ProbFn::Euclidean { w, concat },
        beta: Some(beta),
        m: E.sqrt(),
        radius: r,
        variance: VarianceModel::ScaleFree { beta, m: E.sqrt() },
        complexity: concat as f64,
    })
}

/// Kernel `1/(1 + r^p)`: `q` line partitions of width `√(2π)`, `(q/p, 3^q)`-scale free.
pub fn make_student_hbe(p: u32, q: u32) -> Result<HbeScheme> {
    if q == 0 || p == 0 {
        return input("t-Student exponents must be at least 1");
    }
    if q > p {
        return domain(format!("q = {q} exceeds p = {p}, the scale exponent q/p would exceed 1"));
    }
    let w = (2.0 * PI).sqrt();
    let concat = q as usize;
    let beta = q as f64 / p as f64;
    let m = 3f64.powi(q as i32);
    Ok(HbeScheme {
        kind: SchemeKind::Student,
        kernel: KernelSpec::t_student(p, 1.0),
        family: HashFamilySpec::Euclidean { w, concat },
        prob: ProbFn::Euclidean { w, concat },
        beta: Some(beta),
        m,
        radius: f64::INFINITY,
        variance: VarianceModel::ScaleFree { beta, m },
        complexity: concat as f64,
    })
}

/// Gaussian kernel through line partitions: `D = 3⌈tR⌉²`, `w = (D/t)√(2/π)`,
/// so that `e^{−tr}/√e ≤ p(r) ≤ √e e^{−tr}` on `[0, R]`.
pub fn make_gaussian_euclid_hbe(r: f64, t: f64) -> Result<HbeScheme> {
    check_radius(r)?;
    if !(t >= 1.0 && t <= r) {
        return domain(format!("t must lie in [1, R] = [1, {r}], got {t}"));
    }
    let root = (t * r).ceil();
    let concat = 3 * (root * root) as usize;
    let w = concat as f64 / t * (2.0 / PI).sqrt();
    Ok(HbeScheme {
        kind: SchemeKind::GaussianEuclid,
        kernel: KernelSpec::gaussian(1.0),
        family: HashFamilySpec::Euclidean { w, concat },
        prob: ProbFn::Euclidean { w, concat },
        beta: None,
        m: E.sqrt(),
        radius: r,
        variance: VarianceModel::GaussianEuclid { t },
        complexity: concat as f64,
    })
}

/// Default relative margin of the carving region around the projected data.
pub const DEFAULT_SLACK: f64 = 0.25;

/// Gaussian kernel through ball carving: `t = max(⌈R^{4/3}⌉, 12)`,
/// `D = ⌈8√t R²/(t−1)⌉`, `w = √((t−1)D/(8β))`. `M` is measured on `[0, R]`.
pub fn make_gaussian_ball_hbe(r: f64, beta: f64) -> Result<HbeScheme> {
    make_gaussian_ball_hbe_with_slack(r, beta, DEFAULT_SLACK)
}

pub fn make_gaussian_ball_hbe_with_slack(r: f64, beta: f64, slack: f64) -> Result<HbeScheme> {
    check_radius(r)?;
    check_beta(beta)?;
    if !(slack >= 0.0 && slack.is_finite()) {
        return input(format!("slack must be nonnegative, got {slack}"));
    }
    let t = (r.powf(4.0 / 3.0).ceil() as usize).max(12);
    let tf = t as f64;
    let concat = (8.0 * tf.sqrt() * r * r / (tf - 1.0)).ceil().max(1.0) as usize;
    let w = ((tf - 1.0) * concat as f64 / (8.0 * beta)).sqrt();
    let table = Arc::new(BallCollisionTable::new(t, 2.0 * (1.0 + slack) * r / w));
    let prob = ProbFn::Ball { w, concat, table };
    let m = measured_distortion(&prob, beta, r);
    Ok(HbeScheme {
        kind: SchemeKind::GaussianBall,
        kernel: KernelSpec::gaussian(1.0),
        family: HashFamilySpec::BallCarving { t, w, concat, slack },
        prob,
        beta: Some(beta),
        m,
        radius: r,
        variance: VarianceModel::ScaleFree { beta, m },
        complexity: (concat * t) as f64,
    })
}

/// `max_{r ∈ [0,R]} max(p/k^β, k^β/p)` for the Gaussian kernel on a fine grid.
fn measured_distortion(prob: &ProbFn, beta: f64, r: f64) -> f64 {
    const GRID: usize = 512;
    let worst = (0..=GRID)
        .map(|i| {
            let x = r * i as f64 / GRID as f64;
            (prob.ln_prob(x) + beta * x * x).abs()
        })
        .fold(0.0f64, f64::max);
    worst.exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_parameters() {
        let s = make_exponential_hbe(2.0, 0.5).unwrap();
        assert_eq!(s.family.concat(), 36);
        assert!((s.family.width() - 36.0 / (0.5 * (PI / 2.0).sqrt())).abs() < 1e-12);
        assert!((s.family.width() - 57.45).abs() < 0.01);
        assert!((s.m - 1.6487).abs() < 1e-4);
    }

    #[test]
    fn gaussian_euclid_parameters() {
        let s = make_gaussian_euclid_hbe(10.0, 3.0).unwrap();
        assert_eq!(s.family.concat(), 2700);
        assert!((s.family.width() - 718.1).abs() < 0.05);
        assert!(make_gaussian_euclid_hbe(10.0, 0.5).is_err());
        assert!(make_gaussian_euclid_hbe(2.0, 3.0).is_err());
    }

    #[test]
    fn gaussian_ball_parameters() {
        let s = make_gaussian_ball_hbe(4.0, 0.5).unwrap();
        match s.family {
            HashFamilySpec::BallCarving { t, w, concat, .. } => {
                assert_eq!(t, 12);
                assert_eq!(concat, 41);
                assert!((w - 10.62).abs() < 0.005);
                assert!(w >= 12f64.powf(0.25) * 4.0);
                assert!(4.0 / w <= 12f64.powf(-0.25));
            }
            _ => panic!("wrong family"),
        }
        assert!(s.m >= 1.0);
    }

    #[test]
    fn student_rejects_large_q() {
        assert!(make_student_hbe(2, 3).is_err());
        let s = make_student_hbe(2, 1).unwrap();
        assert_eq!(s.beta, Some(0.5));
        assert_eq!(s.m, 3.0);
    }

    #[test]
    fn variance_models_are_monotone() {
        let models = [
            VarianceModel::ScaleFree { beta: 0.5, m: E.sqrt() },
            VarianceModel::GaussianEuclid { t: 2.0 },
            VarianceModel::RandomSampling,
            VarianceModel::Fourier,
        ];
        for v in models {
            let mut prev_v = f64::INFINITY;
            let mut prev_m = 0.0;
            for i in 0..=400 {
                let mu = 10f64.powf(-8.0 + 8.0 * i as f64 / 400.0);
                let rel = v.relative(mu);
                assert!(rel <= prev_v * (1.0 + 1e-12), "{v:?} at {mu}");
                assert!(mu * mu * rel >= prev_m * (1.0 - 1e-12), "{v:?} at {mu}");
                prev_v = rel;
                prev_m = mu * mu * rel;
            }
        }
    }

    #[test]
    fn gaussian_euclid_variance_at_half() {
        // γ = 1/2 when t = √ln(1/μ)/2.
        let mu: f64 = 1e-30;
        let t = 0.5 * (-mu.ln()).sqrt();
        let v = VarianceModel::GaussianEuclid { t }.relative(mu);
        let expected = 4.0 * E.powf(1.5) * mu.powf(-0.75);
        assert!((v / expected - 1.0).abs() < 1e-9);
    }
}
