//! Kernel matrix-vector products `y = K z` through dyadic weight classes, one
//! weighted estimator index per class.

use rayon::prelude::*;

use crate::error::{input, HbeError, Result};
use crate::estimation::{query_budget, query_kde, required_tables};
use crate::hbe::{HbeIndex, HbeScheme, IndexOptions, Storage, DEFAULT_MEMORY_LIMIT};
use crate::kernels::{distance, KernelSpec, PointSet};
use crate::numeric::KahanSum;
use crate::seed::{derive_seed, stream, TAG_CLASS, TAG_QUERY};

/// Indices whose weight falls in one class, with their total weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightClass {
    pub indices: Vec<usize>,
    pub mass: f64,
}

/// `classes[0]` holds weights below `τ'/n`; `classes[ℓ]` for `ℓ ≥ 1` holds
/// weights in `[2^{−ℓ}, 2^{−ℓ+1})`, with the value 1 placed in class 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightPartition {
    pub classes: Vec<WeightClass>,
    pub levels: u32,
    pub tau_prime: f64,
}

impl WeightPartition {
    /// Classes `ℓ ≥ 1` whose mass reaches `τ'/L`.
    pub fn kept(&self) -> Vec<u32> {
        let floor = self.tau_prime / self.levels as f64;
        (1..self.classes.len() as u32).filter(|&l| self.classes[l as usize].mass >= floor).collect()
    }
}

/// Level `ℓ ≥ 1` with `2^{−ℓ} ≤ z < 2^{−ℓ+1}`, read off the binary exponent.
fn dyadic_level(z: f64) -> u32 {
    let biased = ((z.to_bits() >> 52) & 0x7ff) as i64;
    (1022 - biased + 1).max(1) as u32
}

pub fn partition_by_weight(z: &[f64], n: usize, eps: f64, tau: f64) -> Result<WeightPartition> {
    if z.len() != n || n == 0 {
        return input(format!("weight vector has {} entries, expected n = {n} ≥ 1", z.len()));
    }
    if let Some(i) = z.iter().position(|&v| !(v >= 0.0 && v.is_finite())) {
        return input(format!("entry {i} is {}; use kmvm_signed for vectors with negative entries", z[i]));
    }
    if !(eps > 0.0 && eps < 1.0 && tau > 0.0 && tau < 1.0) {
        return input("ε and τ must lie in (0, 1)");
    }
    let total: f64 = z.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return input(format!("weights must sum to 1 within 1e-9, got {total}"));
    }
    let tau_prime = eps * tau;
    let floor = tau_prime / n as f64;
    let mut levels = (n as f64 / tau_prime).log2().ceil().max(1.0) as u32;
    let assigned: Vec<u32> = z.iter().map(|&v| if v < floor || v == 0.0 { 0 } else { dyadic_level(v) }).collect();
    levels = levels.max(assigned.iter().copied().max().unwrap_or(0));
    let mut classes = vec![WeightClass { indices: Vec::new(), mass: 0.0 }; levels as usize + 1];
    for (i, &l) in assigned.iter().enumerate() {
        classes[l as usize].indices.push(i);
    }
    for c in classes.iter_mut() {
        c.mass = c.indices.iter().map(|&i| z[i]).fold(KahanSum::new(), |mut s, v| {
            s.add(v);
            s
        }).value();
    }
    Ok(WeightPartition { classes, levels, tau_prime })
}

#[derive(Debug, Clone)]
pub struct KmvmOptions {
    /// Scheme applied to every class; its diameter bound must cover the data.
    pub scheme: HbeScheme,
    pub seed: u64,
    /// Classes smaller than this are summed exactly.
    pub crossover: usize,
    pub storage: Storage,
    pub c_n: f64,
    pub memory_limit: u64,
}

impl KmvmOptions {
    pub fn new(scheme: HbeScheme, seed: u64) -> Self {
        Self { scheme, seed, crossover: 64, storage: Storage::Auto, c_n: 1.0, memory_limit: DEFAULT_MEMORY_LIMIT }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmvmOutput {
    pub y: Vec<f64>,
    pub partition: WeightPartition,
    pub kept: Vec<u32>,
    /// Estimator samples drawn across all classes and queries.
    pub samples: u64,
}

/// Approximates `y_i = Σ_j k(x_i, x_j) z_j` for a nonnegative `z` with `‖z‖₁ = 1`.
pub fn kmvm(points: &PointSet, kernel: &KernelSpec, z: &[f64], eps: f64, tau: f64, chi_total: f64, opts: &KmvmOptions) -> Result<KmvmOutput> {
    if !(chi_total > 0.0 && chi_total < 1.0) {
        return input(format!("χ must lie in (0, 1), got {chi_total}"));
    }
    let n = points.n();
    let partition = partition_by_weight(z, n, eps, tau)?;
    let kept = partition.kept();
    let tau_prime = partition.tau_prime;
    let chi_q = chi_total / (n as f64 * partition.levels as f64);
    let mut y = vec![0.0; n];
    let mut samples = 0u64;
    for &l in &kept {
        let class = &partition.classes[l as usize];
        let contrib: Vec<(f64, u64)> = if class.indices.len() < opts.crossover {
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let x = points.point(i);
                    let s = class.indices.iter().map(|&j| z[j] * kernel.weight_at(distance(x, points.point(j)))).sum::<f64>();
                    (s, 0)
                })
                .collect()
        } else {
            let sub = points.subset(&class.indices)?;
            let masses: Vec<f64> = class.indices.iter().map(|&j| z[j] / class.mass).collect();
            let renorm: f64 = masses.iter().sum();
            let masses: Vec<f64> = masses.iter().map(|a| a / renorm).collect();
            let v_tau = 4.0 * opts.scheme.variance.relative(tau_prime);
            let class_seed = derive_seed(opts.seed, TAG_CLASS, l as u64);
            let index_opts = IndexOptions {
                tables: required_tables(eps, chi_q, v_tau, opts.c_n).max(query_budget(eps, tau_prime, chi_q, 1.0, |m| 4.0 * opts.scheme.variance.relative(m))?),
                seed: class_seed,
                storage: opts.storage,
                memory_limit: opts.memory_limit,
            };
            let index = HbeIndex::build_weighted(&sub, kernel, &opts.scheme, &index_opts, masses)
                .map_err(|e| HbeError::Kmvm { class: l as usize, query: 0, source: Box::new(e) })?;
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let rng = stream(class_seed, TAG_QUERY, i as u64);
                    query_kde(&index, points.point(i), eps, tau_prime, chi_q, rng)
                        .map(|r| (class.mass * r.value, r.samples_used))
                        .map_err(|e| HbeError::Kmvm { class: l as usize, query: i, source: Box::new(e) })
                })
                .collect::<Result<_>>()?
        };
        for (yi, (v, s)) in y.iter_mut().zip(contrib) {
            *yi += v;
            samples += s;
        }
    }
    Ok(KmvmOutput { y, partition, kept, samples })
}

/// Signed vectors: both parts are normalized, multiplied with the same seed and recombined.
pub fn kmvm_signed(points: &PointSet, kernel: &KernelSpec, z: &[f64], eps: f64, tau: f64, chi_total: f64, opts: &KmvmOptions) -> Result<Vec<f64>> {
    if z.len() != points.n() {
        return input(format!("vector has {} entries, expected {}", z.len(), points.n()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return input("vector entries must be finite");
    }
    let mut y = vec![0.0; z.len()];
    for sign in [1.0, -1.0] {
        let part: Vec<f64> = z.iter().map(|&v| (sign * v).max(0.0)).collect();
        let scale: f64 = part.iter().sum();
        if scale == 0.0 {
            continue;
        }
        let unit: Vec<f64> = part.iter().map(|v| v / scale).collect();
        let total: f64 = unit.iter().sum();
        let unit: Vec<f64> = unit.iter().map(|v| v / total).collect();
        let out = kmvm(points, kernel, &unit, eps, tau, chi_total, opts)?;
        for (yi, v) in y.iter_mut().zip(out.y) {
            *yi += sign * scale * v;
        }
    }
    Ok(y)
}

/// Dense product `K z`.
pub fn dense_product(points: &PointSet, kernel: &KernelSpec, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != points.n() {
        return input(format!("vector has {} entries, expected {}", z.len(), points.n()));
    }
    Ok((0..points.n())
        .into_par_iter()
        .map(|i| {
            let x = points.point(i);
            let mut s = KahanSum::new();
            for (j, &zj) in z.iter().enumerate() {
                s.add(zj * kernel.weight_at(distance(x, points.point(j))));
            }
            s.value()
        })
        .collect())
}
