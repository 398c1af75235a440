//! Hash-table indexes that serve one hashing-based estimator sample per
//! (table, query), plus second-moment bounds and kernel-specific schemes.
//!
//! Table `i` always uses the hash function drawn from `stream(seed, TAG_TABLE, i)`.
//! A `Materialized` index stores the buckets; an `Implicit` index regenerates
//! the hash when the table is visited and finds the bucket by scanning the
//! data (or, for one-dimensional data under line partitions, by binary search
//! over the sorted coordinates). Both give the same buckets.

mod bounds;
mod schemes;
pub mod serial;

pub use bounds::{scale_free_variance_bound, second_moment_upper_bound, two_point_variance_bound, VarianceBound};
pub use schemes::{
    make_exponential_hbe, make_gaussian_ball_hbe, make_gaussian_ball_hbe_with_slack, make_gaussian_euclid_hbe,
    make_student_hbe, HashFamilySpec, HbeScheme, ProbFn, SchemeKind, VarianceModel, DEFAULT_SLACK,
};

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{domain, input, HbeError, Result};
use crate::kernels::{distance, normalize_bandwidth, KernelSpec, PointSet};
use crate::lsh::{sample_ball_carving, sample_euclidean, BallCarvingHash, BallCarvingParams, EuclideanHash};
use crate::seed::{stream, Rng, TAG_TABLE};

/// Identifier hashed for a query point; never equal to a data point id.
const QUERY_ID: u64 = u64::MAX >> 1;

/// Default cap on the memory of a materialized index.
pub const DEFAULT_MEMORY_LIMIT: u64 = 2 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Storage {
    Materialized,
    Implicit,
    /// Materialized when the estimated footprint fits the memory limit, implicit otherwise.
    Auto,
}

impl Storage {
    pub fn name(&self) -> &'static str {
        match self {
            Storage::Materialized => "materialized",
            Storage::Implicit => "implicit",
            Storage::Auto => "auto",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexOptions {
    pub tables: u64,
    pub seed: u64,
    pub storage: Storage,
    pub memory_limit: u64,
}

impl IndexOptions {
    pub fn new(tables: u64, seed: u64) -> Self {
        Self { tables, seed, storage: Storage::Materialized, memory_limit: DEFAULT_MEMORY_LIMIT }
    }

    pub fn implicit(tables: u64, seed: u64) -> Self {
        Self { storage: Storage::Implicit, ..Self::new(tables, seed) }
    }
}

/// One sampled hash function.
#[derive(Debug, Clone, PartialEq)]
pub enum TableHash {
    Euclidean(EuclideanHash),
    Ball(BallCarvingHash),
}

impl TableHash {
    pub fn sample(family: &HashFamilySpec, points: &PointSet, rng: &mut Rng) -> Result<Self> {
        Ok(match *family {
            HashFamilySpec::Euclidean { w, concat } => TableHash::Euclidean(sample_euclidean(w, concat, points.d(), rng)?),
            HashFamilySpec::BallCarving { t, w, concat, slack } => {
                let params = BallCarvingParams { t, w, concat, slack, n_hint: points.n() };
                TableHash::Ball(sample_ball_carving(&params, points, rng)?)
            }
        })
    }

    pub fn fingerprint(&self, x: &[f64], id: u64) -> u64 {
        match self {
            TableHash::Euclidean(h) => h.fingerprint(x),
            TableHash::Ball(h) => h.fingerprint(x, id),
        }
    }

    fn query_fingerprint(&self, x: &[f64]) -> Result<u64> {
        if let TableHash::Ball(h) = self {
            if !h.covers(x) {
                return domain("query lies outside the ball carving region of a table");
            }
        }
        Ok(self.fingerprint(x, QUERY_ID))
    }

    fn approx_bytes(&self) -> u64 {
        match self {
            TableHash::Euclidean(h) => 8 * (h.directions().len() + h.offsets().len()) as u64,
            TableHash::Ball(h) => h
                .copies()
                .iter()
                .map(|c| 8 * (c.projection().len() + c.origin().len() + 64 * c.origin().len()) as u64)
                .sum(),
        }
    }
}

/// Buckets of one table, ids grouped by key and ascending within a bucket.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Table {
    pub(crate) hash: TableHash,
    pub(crate) keys: Vec<u64>,
    pub(crate) starts: Vec<u32>,
    pub(crate) ids: Vec<u32>,
}

impl Table {
    fn build(hash: TableHash, points: &PointSet) -> Self {
        let mut pairs: Vec<(u64, u32)> =
            (0..points.n()).map(|j| (hash.fingerprint(points.point(j), j as u64), j as u32)).collect();
        pairs.sort_unstable();
        let mut keys = Vec::new();
        let mut starts = Vec::new();
        for (pos, &(k, _)) in pairs.iter().enumerate() {
            if keys.last() != Some(&k) {
                keys.push(k);
                starts.push(pos as u32);
            }
        }
        starts.push(pairs.len() as u32);
        Self { hash, keys, starts, ids: pairs.into_iter().map(|(_, j)| j).collect() }
    }

    fn bucket(&self, key: u64) -> &[u32] {
        match self.keys.binary_search(&key) {
            Ok(b) => &self.ids[self.starts[b] as usize..self.starts[b + 1] as usize],
            Err(_) => &[],
        }
    }

    fn bytes(&self) -> u64 {
        (4 * self.ids.len() + 12 * self.keys.len() + 4) as u64 + self.hash.approx_bytes()
    }
}

/// One-dimensional data sorted by coordinate.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SortedLine {
    coords: Vec<f64>,
    ids: Vec<u32>,
}

impl SortedLine {
    fn new(points: &PointSet) -> Self {
        let mut order: Vec<u32> = (0..points.n() as u32).collect();
        order.sort_by(|&a, &b| points.point(a as usize)[0].total_cmp(&points.point(b as usize)[0]).then(a.cmp(&b)));
        Self { coords: order.iter().map(|&j| points.point(j as usize)[0]).collect(), ids: order }
    }

    /// Positions `[lo, hi)` whose key equals the query key.
    ///
    /// Each component's bucket is an interval of the line. Their intersection is
    /// located in closed form, then its ends are settled by exact key comparison.
    fn range(&self, h: &EuclideanHash, x: f64) -> (usize, usize) {
        let w = h.width();
        let (mut lo_b, mut hi_b) = (f64::NEG_INFINITY, f64::INFINITY);
        for k in 0..h.concat() {
            let qk = h.component(k, &[x]);
            let g = h.direction(k)[0];
            if g == 0.0 {
                continue;
            }
            let b = h.offsets()[k];
            let inv = 1.0 / g;
            let e1 = ((qk - 1) as f64 * w - b) * inv;
            let e2 = (qk as f64 * w - b) * inv;
            lo_b = lo_b.max(e1.min(e2));
            hi_b = hi_b.min(e1.max(e2));
        }
        let tol_lo = 1e-9 * (1.0 + x.abs() + lo_b.abs());
        let tol_hi = 1e-9 * (1.0 + x.abs() + hi_b.abs());
        if lo_b - tol_lo > hi_b + tol_hi {
            return (0, 0);
        }
        let matches = |y: f64| (0..h.concat()).all(|k| h.component(k, &[y]) == h.component(k, &[x]));
        let mut lo = self.coords.partition_point(|&y| y < lo_b - tol_lo);
        let mut hi = self.coords.partition_point(|&y| y <= hi_b + tol_hi);
        // Only points within the tolerance band of an end can disagree with the closed form.
        while lo < hi && self.coords[lo] <= lo_b + tol_lo && !matches(self.coords[lo]) {
            lo += 1;
        }
        while hi > lo && self.coords[hi - 1] >= hi_b - tol_hi && !matches(self.coords[hi - 1]) {
            hi -= 1;
        }
        (lo, hi)
    }

    #[cfg(test)]
    fn range_by_search(&self, h: &EuclideanHash, x: f64) -> (usize, usize) {
        let (mut lo, mut hi) = (0, self.coords.len());
        for k in 0..h.concat() {
            let comp = |y: &f64| h.component(k, std::slice::from_ref(y));
            let q = comp(&x);
            let g = h.direction(k)[0];
            let s = &self.coords[lo..hi];
            let (a, b) = if g > 0.0 {
                (s.partition_point(|y| comp(y) < q), s.partition_point(|y| comp(y) <= q))
            } else if g < 0.0 {
                (s.partition_point(|y| comp(y) > q), s.partition_point(|y| comp(y) >= q))
            } else if s.first().is_some_and(|y| comp(y) == q) {
                (0, s.len())
            } else {
                (0, 0)
            };
            hi = lo + b;
            lo += a;
            if lo >= hi {
                return (0, 0);
            }
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Backend {
    Materialized(Vec<Table>),
    Implicit(Option<SortedLine>),
}

/// `N` hash tables over a fixed point set.
#[derive(Debug, Clone)]
pub struct HbeIndex {
    pub(crate) points: PointSet,
    pub(crate) kernel: KernelSpec,
    pub(crate) scheme: HbeScheme,
    pub(crate) tables: u64,
    pub(crate) seed: u64,
    pub(crate) masses: Option<Vec<f64>>,
    pub(crate) checksum: [u8; 32],
    pub(crate) backend: Backend,
}

/// Builds `tables` materialized tables with seeds derived from `master_seed`.
pub fn build_index(points: &PointSet, kernel: &KernelSpec, scheme: &HbeScheme, tables: u64, master_seed: u64) -> Result<HbeIndex> {
    HbeIndex::build(points, kernel, scheme, &IndexOptions::new(tables, master_seed))
}

impl HbeIndex {
    pub fn build(points: &PointSet, kernel: &KernelSpec, scheme: &HbeScheme, opts: &IndexOptions) -> Result<Self> {
        Self::build_inner(points, kernel, scheme, opts, None)
    }

    /// Index whose samples estimate `Σ_j a_j k(x, x_j)` for nonnegative masses summing to one.
    pub fn build_weighted(points: &PointSet, kernel: &KernelSpec, scheme: &HbeScheme, opts: &IndexOptions, masses: Vec<f64>) -> Result<Self> {
        if masses.len() != points.n() {
            return input("one mass per point is required");
        }
        if masses.iter().any(|&a| !(a >= 0.0 && a.is_finite())) {
            return input("masses must be nonnegative and finite");
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return input(format!("masses must sum to 1, got {total}"));
        }
        Self::build_inner(points, kernel, scheme, opts, Some(masses))
    }

    fn build_inner(points: &PointSet, kernel: &KernelSpec, scheme: &HbeScheme, opts: &IndexOptions, masses: Option<Vec<f64>>) -> Result<Self> {
        if opts.tables == 0 {
            return input("at least one table is required");
        }
        let checksum = serial::dataset_checksum(points);
        let (unit, kernel_unit) = normalize_bandwidth(points, kernel)?;
        scheme.check_compatible(&kernel_unit, unit.diameter_bound())?;
        let mut index = Self {
            points: unit,
            kernel: *kernel,
            scheme: scheme.clone(),
            tables: opts.tables,
            seed: opts.seed,
            masses,
            checksum,
            backend: Backend::Implicit(None),
        };
        let storage = match opts.storage {
            Storage::Auto if index.estimated_bytes() <= opts.memory_limit => Storage::Materialized,
            Storage::Auto => Storage::Implicit,
            s => s,
        };
        index.backend = match storage {
            Storage::Materialized => Backend::Materialized(index.materialize(opts.memory_limit)?),
            _ => Backend::Implicit(index.line_eligible().then(|| SortedLine::new(&index.points))),
        };
        Ok(index)
    }

    fn line_eligible(&self) -> bool {
        self.points.d() == 1 && matches!(self.scheme.family, HashFamilySpec::Euclidean { .. })
    }

    fn estimated_bytes(&self) -> u64 {
        let n = self.points.n() as u64;
        let per_table = 16 * n + 64 + 8 * (self.scheme.family.concat() as u64) * (self.points.d() as u64 + 1);
        per_table.saturating_mul(self.tables)
    }

    fn materialize(&self, limit: u64) -> Result<Vec<Table>> {
        let estimate = self.estimated_bytes();
        if estimate > limit {
            return Err(HbeError::Config(format!(
                "materializing {} tables needs about {} MiB (limit {} MiB); use implicit storage or fewer tables",
                self.tables,
                estimate >> 20,
                limit >> 20
            )));
        }
        let tables: Vec<Table> = (0..self.tables)
            .into_par_iter()
            .map(|i| Ok(Table::build(self.table_hash(i)?, &self.points)))
            .collect::<Result<_>>()?;
        let used: u64 = tables.iter().map(Table::bytes).sum();
        if used > limit {
            return Err(HbeError::Config(format!("materialized index uses {} MiB, over the limit of {} MiB", used >> 20, limit >> 20)));
        }
        Ok(tables)
    }

    /// Hash function of table `i`.
    pub fn table_hash(&self, i: u64) -> Result<TableHash> {
        TableHash::sample(&self.scheme.family, &self.points, &mut stream(self.seed, TAG_TABLE, i))
    }

    pub fn n(&self) -> usize {
        self.points.n()
    }
    pub fn d(&self) -> usize {
        self.points.d()
    }
    pub fn tables(&self) -> u64 {
        self.tables
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn scheme(&self) -> &HbeScheme {
        &self.scheme
    }
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }
    /// Data at unit bandwidth.
    pub fn unit_points(&self) -> &PointSet {
        &self.points
    }
    pub fn checksum(&self) -> &[u8; 32] {
        &self.checksum
    }
    pub fn masses(&self) -> Option<&[f64]> {
        self.masses.as_deref()
    }
    pub fn storage(&self) -> Storage {
        match self.backend {
            Backend::Materialized(_) => Storage::Materialized,
            Backend::Implicit(_) => Storage::Implicit,
        }
    }

    /// Relative-variance bound of one sample.
    pub fn variance(&self, mu: f64) -> f64 {
        let v = self.scheme.variance.relative(mu);
        if self.masses.is_some() {
            4.0 * v
        } else {
            v
        }
    }

    /// Collision probability at distance `r` in data units.
    pub fn collision_prob(&self, r: f64) -> f64 {
        self.scheme.prob.prob(r / self.kernel.bandwidth)
    }

    /// All buckets of table `i` as sorted id lists.
    pub fn buckets(&self, i: u64) -> Result<Vec<Vec<usize>>> {
        if i >= self.tables {
            return input(format!("table {i} out of range"));
        }
        let built;
        let table = match &self.backend {
            Backend::Materialized(t) => &t[i as usize],
            Backend::Implicit(_) => {
                built = Table::build(self.table_hash(i)?, &self.points);
                &built
            }
        };
        Ok((0..table.keys.len())
            .map(|b| table.ids[table.starts[b] as usize..table.starts[b + 1] as usize].iter().map(|&j| j as usize).collect())
            .collect())
    }

    fn prepare(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d() {
            return input(format!("query dimension {} does not match data dimension {}", x.len(), self.d()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return input("non-finite query coordinate");
        }
        Ok(x.iter().map(|v| v / self.kernel.bandwidth).collect())
    }

    /// Query session over all tables, starting at a random offset.
    pub fn session(&self, x: &[f64], rng: Rng) -> Result<QuerySession<'_>> {
        let mut rng = rng;
        let cursor = TableCursor::random(self.tables, &mut rng);
        Ok(QuerySession { index: self, x: self.prepare(x)?, cursor, rng, scratch: Scratch::default(), drawn: 0 })
    }

    /// Bucket of table `i` for a unit-bandwidth query: its size and one uniformly chosen resident.
    fn draw_from_table(&self, i: u64, x: &[f64], rng: &mut Rng, scratch: &mut Scratch) -> Result<Option<(usize, u32)>> {
        let pick = |bucket: &[u32], rng: &mut Rng| {
            if bucket.is_empty() {
                None
            } else {
                Some((bucket.len(), bucket[rng.random_range(0..bucket.len())]))
            }
        };
        match &self.backend {
            Backend::Materialized(tables) => {
                let table = &tables[i as usize];
                let key = table.hash.query_fingerprint(x)?;
                Ok(pick(table.bucket(key), rng))
            }
            Backend::Implicit(Some(line)) => {
                let HashFamilySpec::Euclidean { concat, .. } = self.scheme.family else {
                    unreachable!("sorted line requires a Euclidean family")
                };
                let mut table_rng = stream(self.seed, TAG_TABLE, i);
                let h = match &mut scratch.line {
                    Some(h) => {
                        h.redraw(concat, &mut table_rng);
                        h
                    }
                    slot => match self.table_hash(i)? {
                        TableHash::Euclidean(h) => slot.insert(h),
                        TableHash::Ball(_) => unreachable!("sorted line requires a Euclidean family"),
                    },
                };
                let (lo, hi) = line.range(h, x[0]);
                Ok(pick(&line.ids[lo..hi], rng))
            }
            Backend::Implicit(None) => {
                let hash = self.table_hash(i)?;
                let scratch = &mut scratch.ids;
                scratch.clear();
                match &hash {
                    TableHash::Euclidean(h) => {
                        let q = h.key(x);
                        for j in 0..self.n() {
                            let y = self.points.point(j);
                            if q.iter().enumerate().all(|(k, &qk)| h.component(k, y) == qk) {
                                scratch.push(j as u32);
                            }
                        }
                    }
                    TableHash::Ball(h) => {
                        if !h.covers(x) {
                            return domain("query lies outside the ball carving region of a table");
                        }
                        let q = h.key(x, QUERY_ID);
                        let mut px = vec![0.0; h.t()];
                        for j in 0..self.n() {
                            let y = self.points.point(j);
                            let hit = h.copies().iter().zip(&q).all(|(c, &qk)| {
                                c.project(y, &mut px);
                                c.first_cover(&px).map(|k| k as u64) == Some(qk)
                            });
                            if hit {
                                scratch.push(j as u32);
                            }
                        }
                    }
                }
                Ok(pick(scratch, rng))
            }
        }
    }

    fn estimate_from(&self, x: &[f64], drawn: Option<(usize, u32)>) -> f64 {
        let Some((size, j)) = drawn else {
            return 0.0;
        };
        let y = self.points.point(j as usize);
        let r = distance(x, y);
        let ratio = (self.scheme.kernel.ln_profile(r) - self.scheme.prob.ln_prob(r)).exp();
        let mass = match &self.masses {
            Some(a) => a[j as usize],
            None => 1.0 / self.n() as f64,
        };
        mass * ratio * size as f64
    }
}

/// Buffers reused across the samples of one query.
#[derive(Debug, Default)]
struct Scratch {
    ids: Vec<u32>,
    line: Option<EuclideanHash>,
}

/// Cyclic walk over table indices from a starting offset, visiting each table at most once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableCursor {
    total: u64,
    start: u64,
    used: u64,
}

impl TableCursor {
    pub fn new(total: u64, start: u64) -> Self {
        Self { total, start: start % total.max(1), used: 0 }
    }

    pub fn random(total: u64, rng: &mut Rng) -> Self {
        Self::new(total, rng.random_range(0..total.max(1)))
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn remaining(&self) -> u64 {
        self.total - self.used
    }

    pub fn next_table(&mut self) -> Option<u64> {
        if self.used >= self.total {
            return None;
        }
        let i = (self.start + self.used) % self.total;
        self.used += 1;
        Some(i)
    }
}

fn exhausted(used: u64) -> HbeError {
    HbeError::Exhausted { samples_used: used, steps: 0, detail: format!("all {used} tables of the index were consumed by this query") }
}

/// One estimator sample for query `x` (data units) from the next unused table.
pub fn hbe_sample(index: &HbeIndex, cursor: &mut TableCursor, x: &[f64], rng: &mut Rng) -> Result<f64> {
    let x = index.prepare(x)?;
    let i = cursor.next_table().ok_or_else(|| exhausted(cursor.used()))?;
    let drawn = index.draw_from_table(i, &x, rng, &mut Scratch::default())?;
    Ok(index.estimate_from(&x, drawn))
}

/// A single query's stream of samples; never revisits a table.
#[derive(Debug)]
pub struct QuerySession<'a> {
    index: &'a HbeIndex,
    x: Vec<f64>,
    cursor: TableCursor,
    rng: Rng,
    scratch: Scratch,
    drawn: u64,
}

impl QuerySession<'_> {
    pub fn draw(&mut self) -> Result<f64> {
        let i = self.cursor.next_table().ok_or_else(|| exhausted(self.cursor.used()))?;
        let drawn = self.index.draw_from_table(i, &self.x, &mut self.rng, &mut self.scratch)?;
        self.drawn += 1;
        Ok(self.index.estimate_from(&self.x, drawn))
    }

    pub fn samples_drawn(&self) -> u64 {
        self.drawn
    }

    pub fn cursor(&self) -> &TableCursor {
        &self.cursor
    }
}

impl crate::estimation::Sampler for QuerySession<'_> {
    fn sample(&mut self) -> Result<f64> {
        self.draw()
    }
}
