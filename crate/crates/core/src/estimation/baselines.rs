//! Random sampling and random Fourier feature estimators.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::Sampler;
use crate::error::{input, HbeError, Result};
use crate::kernels::{distance, squared_distance, KernelKind, KernelSpec, PointSet};
use crate::numeric::KahanSum;
use crate::seed::Rng;

fn check_query(points: &PointSet, kernel: &KernelSpec, x: &[f64]) -> Result<()> {
    kernel.validate()?;
    if x.len() != points.d() {
        return input(format!("query dimension {} does not match data dimension {}", x.len(), points.d()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return input("non-finite query coordinate");
    }
    Ok(())
}

/// Kernel weight of one uniformly drawn point.
pub fn rs_sample(points: &PointSet, kernel: &KernelSpec, x: &[f64], rng: &mut Rng) -> Result<f64> {
    check_query(points, kernel, x)?;
    let j = rng.random_range(0..points.n());
    Ok(kernel.weight_at(distance(x, points.point(j))))
}

pub struct RsSampler<'a> {
    points: &'a PointSet,
    kernel: KernelSpec,
    x: Vec<f64>,
    rng: Rng,
}

impl<'a> RsSampler<'a> {
    pub fn new(points: &'a PointSet, kernel: &KernelSpec, x: &[f64], rng: Rng) -> Result<Self> {
        check_query(points, kernel, x)?;
        Ok(Self { points, kernel: *kernel, x: x.to_vec(), rng })
    }
}

impl Sampler for RsSampler<'_> {
    fn sample(&mut self) -> Result<f64> {
        let j = self.rng.random_range(0..self.points.n());
        Ok(self.kernel.weight_at(distance(&self.x, self.points.point(j))))
    }
}

fn gaussian_only(kernel: &KernelSpec) -> Result<()> {
    if kernel.kind != KernelKind::Gaussian {
        return Err(HbeError::Unsupported(format!("random Fourier features need the Gaussian kernel, got {}", kernel.name())));
    }
    Ok(())
}

/// `(2/n) Σ_y cos(ωᵀx + b) cos(ωᵀy + b)` with `ω ~ N(0, (2/σ²) I)` and `b ~ U[0, 2π]`.
pub fn rff_sample(points: &PointSet, kernel: &KernelSpec, x: &[f64], rng: &mut Rng) -> Result<f64> {
    check_query(points, kernel, x)?;
    gaussian_only(kernel)?;
    Ok(rff_draw(points, kernel.bandwidth, x, rng, &mut vec![0.0; points.d()]))
}

fn rff_draw(points: &PointSet, sigma: f64, x: &[f64], rng: &mut Rng, omega: &mut [f64]) -> f64 {
    let scale = std::f64::consts::SQRT_2 / sigma;
    for o in omega.iter_mut() {
        *o = rng.sample::<f64, _>(StandardNormal) * scale;
    }
    let b = rng.random::<f64>() * 2.0 * PI;
    let proj = |y: &[f64]| omega.iter().zip(y).map(|(o, v)| o * v).sum::<f64>() + b;
    let mut s = KahanSum::new();
    for y in points.iter() {
        s.add(proj(y).cos());
    }
    2.0 / points.n() as f64 * proj(x).cos() * s.value()
}

pub struct RffSampler<'a> {
    points: &'a PointSet,
    sigma: f64,
    x: Vec<f64>,
    rng: Rng,
    omega: Vec<f64>,
}

impl<'a> RffSampler<'a> {
    pub fn new(points: &'a PointSet, kernel: &KernelSpec, x: &[f64], rng: Rng) -> Result<Self> {
        check_query(points, kernel, x)?;
        gaussian_only(kernel)?;
        Ok(Self { points, sigma: kernel.bandwidth, x: x.to_vec(), rng, omega: vec![0.0; points.d()] })
    }
}

impl Sampler for RffSampler<'_> {
    fn sample(&mut self) -> Result<f64> {
        Ok(rff_draw(self.points, self.sigma, &self.x, &mut self.rng, &mut self.omega))
    }
}

/// Exact second moment of [`rff_sample`]:
/// `1/n + (1/2n²) Σ_y k(2x,2y) + (1/n²) Σ_{y≠z} k(y,z) + (1/2n²) Σ_{y≠z} k(2x, y+z)`,
/// with ordered pairs in the double sums.
pub fn rff_second_moment(points: &PointSet, kernel: &KernelSpec, x: &[f64]) -> Result<f64> {
    check_query(points, kernel, x)?;
    gaussian_only(kernel)?;
    let s2 = kernel.bandwidth * kernel.bandwidth;
    let k = |d2: f64| (-d2 / s2).exp();
    let n = points.n();
    let mut diag = KahanSum::new();
    let mut pairs = KahanSum::new();
    let mut cross = KahanSum::new();
    let mut shifted = vec![0.0; x.len()];
    for i in 0..n {
        let y = points.point(i);
        diag.add(k(4.0 * squared_distance(x, y)));
        for j in 0..n {
            if i == j {
                continue;
            }
            let z = points.point(j);
            pairs.add(k(squared_distance(y, z)));
            for (s, ((a, b), c)) in shifted.iter_mut().zip(x.iter().zip(y).zip(z)) {
                *s = 2.0 * a - b - c;
            }
            cross.add(k(shifted.iter().map(|v| v * v).sum()));
        }
    }
    let nf = n as f64;
    Ok(1.0 / nf + diag.value() / (2.0 * nf * nf) + pairs.value() / (nf * nf) + cross.value() / (2.0 * nf * nf))
}
