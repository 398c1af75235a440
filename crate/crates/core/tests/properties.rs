use std::sync::OnceLock;

use proptest::prelude::*;
use rand::Rng as _;

use hbe::cli::data::{dataset_bytes, parse_bin, parse_csv};
use hbe::cli::DataFormat;
use hbe::diagnostics::{empirical_moments, moments_of};
use hbe::estimation::{amr, median_of_means_detailed, EstimatorHandle, FnSampler};
use hbe::hbe::{
    make_exponential_hbe, make_gaussian_ball_hbe, scale_free_variance_bound, second_moment_upper_bound, two_point_variance_bound, HbeIndex,
    IndexOptions, TableHash,
};
use hbe::kernels::distance;
use hbe::kmvm::partition_by_weight;
use hbe::lsh::{collision_prob_euclidean_bounds, p1, sample_euclidean};
use hbe::seed::{rng_from_seed, stream};
use hbe::{eval_kernel, kde_exact, normalize_bandwidth, KernelSpec, PointSet};

fn kernel_strategy() -> impl Strategy<Value = KernelSpec> {
    (0u32..3, 1u32..5, 0.05f64..5.0).prop_map(|(k, p, bw)| match k {
        0 => KernelSpec::gaussian(bw),
        1 => KernelSpec::exponential(bw),
        _ => KernelSpec::t_student(p, bw),
    })
}

fn points_strategy(max_n: usize, max_d: usize) -> impl Strategy<Value = (Vec<f64>, usize)> {
    (1..=max_d).prop_flat_map(move |d| (prop::collection::vec(-10.0f64..10.0, d..=d * max_n), Just(d))).prop_map(|(mut c, d)| {
        c.truncate(c.len() / d * d);
        (c, d)
    })
}

fn ball_fixture() -> &'static (PointSet, hbe::hbe::HbeScheme) {
    static FIXTURE: OnceLock<(PointSet, hbe::hbe::HbeScheme)> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let pts = PointSet::new(vec![0.0, 0.0, 0.0, 0.5, -0.2, 0.1], 3).unwrap();
        let scheme = make_gaussian_ball_hbe(pts.diameter_bound().max(0.6), 0.5).unwrap();
        (pts, scheme)
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 96, ..ProptestConfig::default() })]

    #[test]
    fn kernel_values_lie_in_unit_interval(k in kernel_strategy(), x in prop::collection::vec(-5.0f64..5.0, 3), y in prop::collection::vec(-5.0f64..5.0, 3)) {
        let v = eval_kernel(&k, &x, &y).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(eval_kernel(&k, &x, &x).unwrap(), 1.0);
    }

    #[test]
    fn kernel_decays_along_a_ray(k in kernel_strategy(), dir in prop::collection::vec(-1.0f64..1.0, 4), steps in prop::collection::vec(0.0f64..3.0, 2..12)) {
        let x = vec![0.3, -0.1, 0.0, 2.0];
        let mut t = 0.0;
        let mut prev = 1.0;
        for s in steps {
            t += s;
            let y: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            let v = eval_kernel(&k, &x, &y).unwrap();
            prop_assert!(v <= prev * (1.0 + 1e-12));
            prev = v;
        }
    }

    #[test]
    fn density_ignores_order_and_bandwidth_normalization((coords, d) in points_strategy(30, 4), k in kernel_strategy(), shift in 0usize..30) {
        let pts = PointSet::new(coords.clone(), d).unwrap();
        let x: Vec<f64> = pts.point(0).iter().map(|v| v + 0.25).collect();
        let base = kde_exact(&pts, &k, &x).unwrap();
        let n = pts.n();
        let rotated: Vec<f64> = (0..n).flat_map(|i| pts.point((i + shift) % n).to_vec()).collect();
        let rot = kde_exact(&PointSet::new(rotated, d).unwrap(), &k, &x).unwrap();
        prop_assert!((base - rot).abs() <= 1e-12 * base.max(1e-300) + 1e-300);
        let (unit, ku) = normalize_bandwidth(&pts, &k).unwrap();
        let xu: Vec<f64> = x.iter().map(|v| v / k.bandwidth).collect();
        let norm = kde_exact(&unit, &ku, &xu).unwrap();
        prop_assert!((base - norm).abs() <= 1e-9 * base + 1e-300);
    }

    #[test]
    fn centroid_bound_dominates_the_diameter((coords, d) in points_strategy(25, 5)) {
        let pts = PointSet::new(coords, d).unwrap();
        prop_assert!(pts.diameter_bound() >= pts.exact_diameter() * (1.0 - 1e-12));
    }

    #[test]
    fn dataset_files_round_trip_bit_exactly((coords, d) in points_strategy(20, 4), bits in prop::collection::vec(any::<u64>(), 0..8)) {
        let mut coords = coords;
        for (slot, b) in coords.iter_mut().zip(bits) {
            let v = f64::from_bits(b);
            if v.is_finite() {
                *slot = v;
            }
        }
        let pts = PointSet::with_bound(coords.clone(), d, 1.0).unwrap();
        let csv = dataset_bytes(&pts, DataFormat::Csv);
        let (c1, d1) = parse_csv(std::str::from_utf8(&csv).unwrap()).unwrap();
        let bin = dataset_bytes(&PointSet::with_bound(c1, d1, 1.0).unwrap(), DataFormat::Bin);
        let (c2, d2) = parse_bin(&bin).unwrap();
        prop_assert_eq!(d2, d);
        prop_assert!(c2.iter().zip(&coords).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn line_collision_probability_is_monotone(a in 0.0f64..50.0, b in 0.0f64..50.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (pl, ph) = (p1(lo), p1(hi));
        prop_assert!((0.0..=1.0).contains(&pl) && (0.0..=1.0).contains(&ph));
        prop_assert!(ph <= pl);
    }

    #[test]
    fn line_bounds_bracket_the_exact_probability(delta in 0.001f64..=0.5, frac in 0.0f64..=1.0) {
        let cmax = delta.min(1.0 / (2.0 * (1.0 / delta).ln()).sqrt());
        let c = frac * cmax;
        let b = collision_prob_euclidean_bounds(c, delta).unwrap();
        let p = p1(c);
        prop_assert!(b.lower <= p * (1.0 + 1e-12) && p <= b.upper * (1.0 + 1e-12), "{} {} {}", b.lower, p, b.upper);
    }

    #[test]
    fn hashes_are_functions_of_seed_and_input(seed in any::<u64>(), x in prop::collection::vec(-3.0f64..3.0, 3)) {
        let h1 = sample_euclidean(1.3, 4, 3, &mut stream(seed, 1, 2)).unwrap();
        let h2 = sample_euclidean(1.3, 4, 3, &mut stream(seed, 1, 2)).unwrap();
        prop_assert_eq!(h1.key(&x), h2.key(&x));
        let (pts, scheme) = ball_fixture();
        let b1 = TableHash::sample(&scheme.family, pts, &mut stream(seed, 3, 4)).unwrap();
        let b2 = TableHash::sample(&scheme.family, pts, &mut stream(seed, 3, 4)).unwrap();
        prop_assert_eq!(b1.fingerprint(pts.point(1), 1), b2.fingerprint(pts.point(1), 1));
    }

    #[test]
    fn scale_free_bound_closed_form(beta in 0.5f64..=1.0, m in 1.0f64..10.0, mu in 1e-6f64..=1.0) {
        let v = scale_free_variance_bound(beta, m, mu, 1.0, 1.0).unwrap();
        let expected = 4.0 * m.powi(3) * mu.powf(2.0 - beta);
        prop_assert!((v.value - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn median_of_means_lies_between_block_means(seed in any::<u64>(), v in 1.0f64..20.0, eps in 0.2f64..0.9, delta in 0.01f64..0.3) {
        let mut rng = rng_from_seed(seed);
        let mut h = EstimatorHandle::new(FnSampler(move || Ok(rng.random::<f64>() * 2.0)), |m| 1.0 / m).unwrap();
        let out = median_of_means_detailed(&mut h, v, eps, delta).unwrap();
        let lo = out.block_means.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = out.block_means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= out.estimate && out.estimate <= hi);
    }

    #[test]
    fn amr_reports_a_level_of_the_schedule(seed in any::<u64>(), mu in 0.05f64..1.0) {
        let mut rng = rng_from_seed(seed);
        let mut h = EstimatorHandle::new(FnSampler(move || Ok(if rng.random::<f64>() < mu { 1.0 } else { 0.0 })), |m| 1.0 / m).unwrap();
        let r = amr(&mut h, 1.0, 0.04, 0.1).unwrap();
        let gamma = 2.0 / 49.0;
        prop_assert!((r.mu_final - (1.0f64 - gamma).powi(r.relaxation_steps as i32)).abs() <= 1e-12);
        prop_assert!(r.mu_final <= 1.0);
    }

    #[test]
    fn weight_partition_is_exact(raw in prop::collection::vec(0.0f64..1.0, 1..200), eps in 0.05f64..0.9, tau in 1e-4f64..0.5) {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 0.0);
        let z: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let s: f64 = z.iter().sum();
        let z: Vec<f64> = z.iter().map(|v| v / s).collect();
        let n = z.len();
        let part = partition_by_weight(&z, n, eps, tau).unwrap();
        let mut seen = vec![0u32; n];
        for (l, c) in part.classes.iter().enumerate() {
            for &i in &c.indices {
                seen[i] += 1;
                if l >= 1 {
                    let lo = 2f64.powi(-(l as i32));
                    prop_assert!(z[i] >= lo && (z[i] < 2.0 * lo || (l == 1 && z[i] == 1.0)));
                }
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let upper: f64 = part.classes[1..].iter().map(|c| c.mass).sum();
        prop_assert!((upper - (1.0 - part.classes[0].mass)).abs() <= 1e-12);
    }
}

/// Independent collisions with probabilities `p`: the colliding set `H` is
/// random, one member `j` is drawn and `Z = (w_j/p_j)·|H|/n`.
#[test]
fn second_moment_bound_covers_independent_collisions() {
    let mut rng = rng_from_seed(31);
    let profiles: [(Vec<f64>, Vec<f64>); 3] = [
        (vec![1.0, 0.5, 0.2, 0.1, 0.05], vec![0.9, 0.6, 0.4, 0.3, 0.1]),
        (vec![0.01; 20], (0..20).map(|i| 0.5 - 0.02 * i as f64).collect()),
        (vec![1.0, 0.001, 0.001, 0.001, 0.001, 0.001, 0.001, 0.001], vec![1.0, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2]),
    ];
    for (w, p) in profiles {
        let n = w.len();
        let bound = second_moment_upper_bound(&w, &p, n).unwrap();
        let trials = 100_000;
        let mut hit = Vec::with_capacity(n);
        let zs: Vec<f64> = (0..trials)
            .map(|_| {
                hit.clear();
                hit.extend((0..n).filter(|&i| rng.random::<f64>() < p[i]));
                if hit.is_empty() {
                    return 0.0;
                }
                let j = hit[rng.random_range(0..hit.len())];
                w[j] / p[j] * hit.len() as f64 / n as f64
            })
            .collect();
        let sq: Vec<f64> = zs.iter().map(|z| z * z).collect();
        let m = moments_of(&sq);
        assert!(m.mean - 3.0 * m.se_mean <= bound, "E[Z²] ≈ {} ± {} vs bound {bound}", m.mean, m.se_mean);
    }
}

#[test]
fn two_point_bound_covers_the_real_estimator() {
    let mut coords = vec![0.0, 0.0];
    for i in 0..40 {
        let a = i as f64 * 0.7;
        let r = 0.3 + 0.1 * (i % 9) as f64;
        coords.extend([r * a.cos(), r * a.sin()]);
    }
    let pts = PointSet::new(coords, 2).unwrap();
    let kernel = KernelSpec::exponential(1.0);
    let scheme = make_exponential_hbe(pts.diameter_bound(), 0.5).unwrap();
    let index = HbeIndex::build(&pts, &kernel, &scheme, &IndexOptions::implicit(100_000, 5)).unwrap();
    for x in [[0.0, 0.0], [0.5, 0.2]] {
        let mu = kde_exact(&pts, &kernel, &x).unwrap();
        let mut prof: Vec<(f64, f64)> = pts.iter().map(|y| {
            let r = distance(&x, y);
            (kernel.weight_at(r), index.collision_prob(r))
        }).collect();
        prof.sort_by(|a, b| b.1.total_cmp(&a.1));
        let (w, p): (Vec<f64>, Vec<f64>) = prof.into_iter().unzip();
        let (bound, _) = two_point_variance_bound(&w, &p, mu).unwrap();
        let mut s = index.session(&x, rng_from_seed(6)).unwrap();
        let m = empirical_moments(&mut s, 100_000).unwrap();
        assert!(m.second_moment - 3.0 * m.se_second_moment <= bound.value, "{} vs {}", m.second_moment, bound.value);
        assert!((m.mean - mu).abs() <= 3.0 * m.se_mean, "mean {} vs {mu}", m.mean);
    }
}

#[test]
fn standard_errors_shrink_with_the_square_root_of_trials() {
    let mut rng = rng_from_seed(17);
    let mut s = FnSampler(move || Ok(rng.random::<f64>().powi(3)));
    let a = empirical_moments(&mut s, 20_000).unwrap();
    let b = empirical_moments(&mut s, 40_000).unwrap();
    let ratio = a.se_mean / b.se_mean;
    assert!((1.2..=1.7).contains(&ratio), "{ratio}");
}
