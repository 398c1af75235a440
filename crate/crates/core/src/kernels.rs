//! Radial kernels, point sets and the brute-force density oracle.

use crate::error::{input, Result};

/// Kernel family. Weights depend only on the scaled distance `r = ‖x−y‖/σ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    /// `exp(−r²)`
    Gaussian,
    /// `exp(−r)`
    Exponential,
    /// `1 / (1 + r^p)`
    TStudent { p: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Self {
        Self { kind: KernelKind::Gaussian, bandwidth }
    }

    pub fn exponential(bandwidth: f64) -> Self {
        Self { kind: KernelKind::Exponential, bandwidth }
    }

    pub fn t_student(p: u32, bandwidth: f64) -> Self {
        Self { kind: KernelKind::TStudent { p }, bandwidth }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return input(format!("bandwidth must be positive and finite, got {}", self.bandwidth));
        }
        if let KernelKind::TStudent { p } = self.kind {
            if p == 0 {
                return input("t-Student exponent p must be at least 1");
            }
        }
        Ok(())
    }

    /// Weight at unit bandwidth as a function of distance.
    #[inline]
    pub fn profile(&self, r: f64) -> f64 {
        match self.kind {
            KernelKind::Gaussian => (-r * r).exp(),
            KernelKind::Exponential => (-r).exp(),
            KernelKind::TStudent { p } => 1.0 / (1.0 + r.powi(p as i32)),
        }
    }

    /// `ln` of [`KernelSpec::profile`], finite wherever the weight is positive.
    #[inline]
    pub fn ln_profile(&self, r: f64) -> f64 {
        match self.kind {
            KernelKind::Gaussian => -r * r,
            KernelKind::Exponential => -r,
            KernelKind::TStudent { p } => -r.powi(p as i32).ln_1p(),
        }
    }

    /// Weight at distance `r` in data units.
    #[inline]
    pub fn weight_at(&self, r: f64) -> f64 {
        self.profile(r / self.bandwidth)
    }

    /// Same kernel at unit bandwidth.
    pub fn unit(&self) -> Self {
        Self { kind: self.kind, bandwidth: 1.0 }
    }

    pub fn name(&self) -> String {
        match self.kind {
            KernelKind::Gaussian => "gaussian".into(),
            KernelKind::Exponential => "exponential".into(),
            KernelKind::TStudent { p } => format!("student{p}"),
        }
    }
}

#[inline]
pub fn distance(x: &[f64], y: &[f64]) -> f64 {
    squared_distance(x, y).sqrt()
}

#[inline]
pub fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Kernel weight `k_σ(x, y)` with full input validation.
pub fn eval_kernel(kernel: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    kernel.validate()?;
    if x.len() != y.len() {
        return input(format!("dimension mismatch: {} vs {}", x.len(), y.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return input("non-finite coordinate");
    }
    Ok(match kernel.kind {
        KernelKind::Gaussian => (-squared_distance(x, y) / (kernel.bandwidth * kernel.bandwidth)).exp(),
        _ => kernel.weight_at(distance(x, y)),
    })
}

/// An `n × d` row-major point matrix with a diameter bound `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    n: usize,
    d: usize,
    coords: Vec<f64>,
    r: f64,
}

impl PointSet {
    /// Builds a point set; `R` is set to twice the largest distance to the centroid.
    pub fn new(coords: Vec<f64>, d: usize) -> Result<Self> {
        let mut ps = Self::unchecked(coords, d)?;
        ps.r = ps.centroid_bound();
        Ok(ps)
    }

    /// Builds a point set with a caller-supplied diameter bound (see [`PointSet::validate_bound`]).
    pub fn with_bound(coords: Vec<f64>, d: usize, r: f64) -> Result<Self> {
        if !(r.is_finite() && r >= 0.0) {
            return input(format!("diameter bound must be finite and nonnegative, got {r}"));
        }
        let mut ps = Self::unchecked(coords, d)?;
        ps.r = r;
        Ok(ps)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return input("rows have unequal length");
        }
        Self::new(rows.concat(), d)
    }

    fn unchecked(coords: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return input("dimension must be at least 1");
        }
        if coords.is_empty() || coords.len() % d != 0 {
            return input(format!("{} coordinates do not form rows of length {d}", coords.len()));
        }
        if let Some(i) = coords.iter().position(|v| !v.is_finite()) {
            return input(format!("non-finite coordinate in row {}", i / d));
        }
        Ok(Self { n: coords.len() / d, d, coords, r: 0.0 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn diameter_bound(&self) -> f64 {
        self.r
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.d)
    }

    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.d];
        for p in self.iter() {
            for (ci, pi) in c.iter_mut().zip(p) {
                *ci += pi;
            }
        }
        c.iter_mut().for_each(|v| *v /= self.n as f64);
        c
    }

    /// Upper bound on the diameter: twice the largest distance to the centroid.
    pub fn centroid_bound(&self) -> f64 {
        let c = self.centroid();
        2.0 * self.iter().map(|p| distance(p, &c)).fold(0.0, f64::max)
    }

    /// Exact diameter, `O(n² d)`.
    pub fn exact_diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.n {
            for j in i + 1..self.n {
                best = best.max(squared_distance(self.point(i), self.point(j)));
            }
        }
        best.sqrt()
    }

    /// Checks that the stored bound dominates the true diameter.
    pub fn validate_bound(&self) -> Result<()> {
        let diam = self.exact_diameter();
        if diam > self.r * (1.0 + 1e-12) {
            return input(format!("diameter bound {} is below the true diameter {diam}", self.r));
        }
        Ok(())
    }

    /// Rows selected by `ids`, keeping the current diameter bound.
    pub fn subset(&self, ids: &[usize]) -> Result<Self> {
        let mut coords = Vec::with_capacity(ids.len() * self.d);
        for &i in ids {
            coords.extend_from_slice(self.point(i));
        }
        Self::with_bound(coords, self.d, self.r)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            n: self.n,
            d: self.d,
            coords: self.coords.iter().map(|v| v * factor).collect(),
            r: self.r * factor,
        }
    }
}

/// Exact kernel density `(1/n) Σ k(x, x_i)`.
pub fn kde_exact(points: &PointSet, kernel: &KernelSpec, x: &[f64]) -> Result<f64> {
    kernel.validate()?;
    if x.len() != points.d() {
        return input(format!("query dimension {} does not match data dimension {}", x.len(), points.d()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return input("non-finite query coordinate");
    }
    let sum: f64 = points.iter().map(|p| kernel.weight_at(distance(x, p))).sum();
    Ok(sum / points.n() as f64)
}

/// Rescales coordinates by `1/σ` so the kernel can be used at unit bandwidth.
pub fn normalize_bandwidth(points: &PointSet, kernel: &KernelSpec) -> Result<(PointSet, KernelSpec)> {
    kernel.validate()?;
    if kernel.bandwidth == 1.0 {
        return Ok((points.clone(), *kernel));
    }
    Ok((points.scaled(1.0 / kernel.bandwidth), kernel.unit()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::KahanSum;
    use crate::seed::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_points(n: usize, d: usize, seed: u64) -> PointSet {
        let mut rng = rng_from_seed(seed);
        let coords = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        PointSet::new(coords, d).unwrap()
    }

    #[test]
    fn reference_weights() {
        let g = KernelSpec::gaussian(1.0);
        assert_eq!(eval_kernel(&g, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0);
        let r = 2f64.ln().sqrt();
        assert!((eval_kernel(&g, &[0.0, 0.0], &[r, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        let s = KernelSpec::t_student(2, 1.0);
        assert_eq!(eval_kernel(&s, &[0.0], &[1.0]).unwrap(), 0.5);
        let e = KernelSpec::exponential(2.0);
        assert!((eval_kernel(&e, &[0.0], &[2.0]).unwrap() - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn kernel_input_errors() {
        let g = KernelSpec::gaussian(1.0);
        assert!(eval_kernel(&g, &[0.0], &[0.0, 1.0]).is_err());
        assert!(eval_kernel(&g, &[f64::NAN], &[0.0]).is_err());
        assert!(eval_kernel(&KernelSpec::gaussian(0.0), &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn kde_small_cases() {
        let ps = PointSet::new(vec![0.3, -0.2], 2).unwrap();
        for k in [KernelSpec::gaussian(1.0), KernelSpec::exponential(0.5), KernelSpec::t_student(3, 2.0)] {
            assert_eq!(kde_exact(&ps, &k, &[0.3, -0.2]).unwrap(), 1.0);
        }
        // Weights 0.5 and 0.25 under the t-Student p=1 kernel: distances 1 and 3.
        let ps = PointSet::new(vec![1.0, 3.0], 1).unwrap();
        let v = kde_exact(&ps, &KernelSpec::t_student(1, 1.0), &[0.0]).unwrap();
        assert!((v - 0.375).abs() < 1e-15);
    }

    #[test]
    fn kde_matches_compensated_resummation() {
        let ps = random_points(100, 10, 11);
        let x = vec![0.1; 10];
        for k in [KernelSpec::gaussian(3.0), KernelSpec::exponential(2.0), KernelSpec::t_student(2, 1.5)] {
            let fast = kde_exact(&ps, &k, &x).unwrap();
            let mut acc = KahanSum::new();
            for i in (0..ps.n()).rev() {
                acc.add(eval_kernel(&k, &x, ps.point(i)).unwrap());
            }
            assert!((fast - acc.value() / 100.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_preserves_density() {
        let ps = random_points(50, 4, 5);
        let x = [0.2, -0.1, 0.4, 0.0];
        let k = KernelSpec::gaussian(2.5);
        let (ps2, k2) = normalize_bandwidth(&ps, &k).unwrap();
        let x2: Vec<f64> = x.iter().map(|v| v / 2.5).collect();
        let a = kde_exact(&ps, &k, &x).unwrap();
        let b = kde_exact(&ps2, &k2, &x2).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!((ps2.diameter_bound() - ps.diameter_bound() / 2.5).abs() < 1e-12);

        let single = PointSet::new(vec![2.0, 0.0], 2).unwrap();
        let (s2, _) = normalize_bandwidth(&single, &KernelSpec::exponential(2.0)).unwrap();
        assert_eq!(s2.point(0), &[1.0, 0.0]);
        let (same, _) = normalize_bandwidth(&ps, &KernelSpec::exponential(1.0)).unwrap();
        assert_eq!(same, ps);
        assert!(normalize_bandwidth(&ps, &KernelSpec::exponential(-1.0)).is_err());
    }

    #[test]
    fn centroid_bound_dominates_diameter() {
        for seed in 0..100 {
            let ps = random_points(20, 3, seed);
            assert!(ps.centroid_bound() >= ps.exact_diameter());
            ps.validate_bound().unwrap();
        }
    }
}
