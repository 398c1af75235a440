//! Versioned little-endian index format.
//!
//! ```text
//! "HBE1" u32 version
//! scheme: u8 kind, f64 radius, f64 beta|t, f64 slack, u32 p, u32 q, u32 D, f64 w
//! kernel: u8 kind, u32 p, f64 bandwidth
//! u64 n, u32 d, u64 tables, u64 seed, u8 storage, [u8; 32] dataset sha256
//! u8 has_masses, then n × f64
//! materialized only, per table:
//!   hash parameters
//!   u32 buckets, per bucket: u64 key, u32 len, ids as LEB128 deltas
//! ```

use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use super::{
    make_exponential_hbe, make_gaussian_ball_hbe_with_slack, make_gaussian_euclid_hbe, make_student_hbe, Backend,
    HashFamilySpec, HbeIndex, HbeScheme, SchemeKind, SortedLine, Table, TableHash, VarianceModel,
};
use crate::error::{HbeError, Result};
use crate::kernels::{normalize_bandwidth, KernelKind, KernelSpec, PointSet};
use crate::lsh::{BallCarvingHash, CarvingCopy, EuclideanHash};

const MAGIC: &[u8; 4] = b"HBE1";
const VERSION: u32 = 1;

/// SHA-256 over `n`, `d` and the coordinates, all little-endian.
pub fn dataset_checksum(points: &PointSet) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((points.n() as u64).to_le_bytes());
    h.update((points.d() as u64).to_le_bytes());
    for v in points.coords() {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(HbeError::Format(msg.into()))
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
    fn varint(&mut self, mut v: u64) {
        while v >= 0x80 {
            self.0.push((v as u8) | 0x80);
            v >>= 7;
        }
        self.0.push(v as u8);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < k {
            return format_err("truncated index");
        }
        let s = &self.buf[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, k: usize) -> Result<Vec<f64>> {
        (0..k).map(|_| self.f64()).collect()
    }
    fn varint(&mut self) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.u8()?;
            v |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        format_err("overlong varint")
    }
}

fn scheme_tag(kind: SchemeKind) -> u8 {
    match kind {
        SchemeKind::Exponential => 0,
        SchemeKind::Student => 1,
        SchemeKind::GaussianEuclid => 2,
        SchemeKind::GaussianBall => 3,
    }
}

fn write_scheme(w: &mut Writer, s: &HbeScheme) {
    w.u8(scheme_tag(s.kind));
    w.f64(s.radius);
    let shape = match s.variance {
        VarianceModel::GaussianEuclid { t } => t,
        _ => s.beta.unwrap_or(f64::NAN),
    };
    w.f64(shape);
    let (slack, p) = match (s.family, s.kernel.kind) {
        (HashFamilySpec::BallCarving { slack, .. }, _) => (slack, 0),
        (_, KernelKind::TStudent { p }) => (0.0, p),
        _ => (0.0, 0),
    };
    w.f64(slack);
    w.u32(p);
    w.u32(s.family.concat() as u32);
    w.u32(s.family.concat() as u32);
    w.f64(s.family.width());
}

fn read_scheme(r: &mut Reader) -> Result<HbeScheme> {
    let tag = r.u8()?;
    let radius = r.f64()?;
    let shape = r.f64()?;
    let slack = r.f64()?;
    let p = r.u32()?;
    let q = r.u32()?;
    let concat = r.u32()? as usize;
    let w = r.f64()?;
    let scheme = match tag {
        0 => make_exponential_hbe(radius, shape)?,
        1 => make_student_hbe(p, q)?,
        2 => make_gaussian_euclid_hbe(radius, shape)?,
        3 => make_gaussian_ball_hbe_with_slack(radius, shape, slack)?,
        _ => return format_err(format!("unknown scheme tag {tag}")),
    };
    if scheme.family.concat() != concat || scheme.family.width() != w {
        return format_err("stored hash parameters disagree with the scheme");
    }
    Ok(scheme)
}

fn write_kernel(w: &mut Writer, k: &KernelSpec) {
    let (tag, p) = match k.kind {
        KernelKind::Gaussian => (0, 0),
        KernelKind::Exponential => (1, 0),
        KernelKind::TStudent { p } => (2, p),
    };
    w.u8(tag);
    w.u32(p);
    w.f64(k.bandwidth);
}

fn read_kernel(r: &mut Reader) -> Result<KernelSpec> {
    let tag = r.u8()?;
    let p = r.u32()?;
    let bandwidth = r.f64()?;
    let kind = match tag {
        0 => KernelKind::Gaussian,
        1 => KernelKind::Exponential,
        2 => KernelKind::TStudent { p },
        _ => return format_err(format!("unknown kernel tag {tag}")),
    };
    let k = KernelSpec { kind, bandwidth };
    k.validate()?;
    Ok(k)
}

fn write_table(w: &mut Writer, t: &Table) {
    match &t.hash {
        TableHash::Euclidean(h) => {
            w.f64s(h.directions());
            w.f64s(h.offsets());
        }
        TableHash::Ball(h) => {
            for c in h.copies() {
                w.f64s(c.projection());
                w.f64s(c.origin());
                w.f64(c.radius());
                w.u64(c.seed());
                w.u64(c.max_centers() as u64);
            }
        }
    }
    w.u32(t.keys.len() as u32);
    for (b, &key) in t.keys.iter().enumerate() {
        let ids = &t.ids[t.starts[b] as usize..t.starts[b + 1] as usize];
        w.u64(key);
        w.u32(ids.len() as u32);
        let mut prev = 0u64;
        for (k, &j) in ids.iter().enumerate() {
            let j = j as u64;
            w.varint(if k == 0 { j } else { j - prev });
            prev = j;
        }
    }
}

fn read_table(r: &mut Reader, family: &HashFamilySpec, n: usize, d: usize) -> Result<Table> {
    let hash = match *family {
        HashFamilySpec::Euclidean { w, concat } => {
            let dirs = r.f64s(concat * d)?;
            let offsets = r.f64s(concat)?;
            TableHash::Euclidean(EuclideanHash::from_parts(w, d, dirs, offsets)?)
        }
        HashFamilySpec::BallCarving { t, w, concat, .. } => {
            let mut copies = Vec::with_capacity(concat);
            for _ in 0..concat {
                let projection = r.f64s(t * d)?;
                let origin = r.f64s(t)?;
                let radius = r.f64()?;
                let seed = r.u64()?;
                let max_centers = r.u64()? as usize;
                copies.push(CarvingCopy::from_parts(t, d, w, projection, origin, radius, seed, max_centers)?);
            }
            TableHash::Ball(BallCarvingHash::from_copies(t, w, d, copies)?)
        }
    };
    let buckets = r.u32()? as usize;
    let mut keys = Vec::with_capacity(buckets);
    let mut starts = Vec::with_capacity(buckets + 1);
    let mut ids = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for _ in 0..buckets {
        let key = r.u64()?;
        if keys.last().is_some_and(|&k| k >= key) {
            return format_err("bucket keys out of order");
        }
        keys.push(key);
        starts.push(ids.len() as u32);
        let len = r.u32()? as usize;
        let mut prev = 0u64;
        for k in 0..len {
            let delta = r.varint()?;
            let j = if k == 0 { delta } else { prev + delta };
            if (k > 0 && delta == 0) || j as usize >= n || seen[j as usize] {
                return format_err("bucket ids do not partition the point set");
            }
            seen[j as usize] = true;
            ids.push(j as u32);
            prev = j;
        }
    }
    starts.push(ids.len() as u32);
    if ids.len() != n {
        return format_err("bucket ids do not partition the point set");
    }
    Ok(Table { hash, keys, starts, ids })
}

impl HbeIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        write_scheme(&mut w, &self.scheme);
        write_kernel(&mut w, &self.kernel);
        w.u64(self.n() as u64);
        w.u32(self.d() as u32);
        w.u64(self.tables);
        w.u64(self.seed);
        w.u8(matches!(self.backend, Backend::Materialized(_)) as u8);
        w.0.extend_from_slice(&self.checksum);
        match &self.masses {
            Some(a) => {
                w.u8(1);
                w.f64s(a);
            }
            None => w.u8(0),
        }
        if let Backend::Materialized(tables) = &self.backend {
            for t in tables {
                write_table(&mut w, t);
            }
        }
        w.0
    }

    /// Restores an index; `points` must be the dataset it was built from.
    pub fn from_bytes(bytes: &[u8], points: &PointSet) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return format_err("bad magic, expected HBE1");
        }
        let version = r.u32()?;
        if version != VERSION {
            return format_err(format!("unsupported index version {version}"));
        }
        let scheme = read_scheme(&mut r)?;
        let kernel = read_kernel(&mut r)?;
        let n = r.u64()? as usize;
        let d = r.u32()? as usize;
        let tables = r.u64()?;
        let seed = r.u64()?;
        let materialized = match r.u8()? {
            0 => false,
            1 => true,
            s => return format_err(format!("unknown storage tag {s}")),
        };
        let checksum: [u8; 32] = r.take(32)?.try_into().unwrap();
        if n != points.n() || d != points.d() || checksum != dataset_checksum(points) {
            return format_err("index was built from a different dataset (checksum mismatch)");
        }
        let masses = match r.u8()? {
            0 => None,
            1 => Some(r.f64s(n)?),
            f => return format_err(format!("bad mass flag {f}")),
        };
        if tables == 0 {
            return format_err("index has no tables");
        }
        let (unit, _) = normalize_bandwidth(points, &kernel)?;
        let backend = if materialized {
            let tables = (0..tables).map(|_| read_table(&mut r, &scheme.family, n, d)).collect::<Result<Vec<_>>>()?;
            Backend::Materialized(tables)
        } else {
            let eligible = d == 1 && matches!(scheme.family, HashFamilySpec::Euclidean { .. });
            Backend::Implicit(eligible.then(|| SortedLine::new(&unit)))
        };
        if r.pos != bytes.len() {
            return format_err("trailing bytes after index");
        }
        Ok(Self { points: unit, kernel, scheme, tables, seed, masses, checksum, backend })
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R, points: &PointSet) -> Result<Self> {
        let mut buf = Vec::new();
        input.read_to_end(&mut buf)?;
        Self::from_bytes(&buf, points)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hbe::{build_index, make_gaussian_ball_hbe, IndexOptions};

    fn points() -> PointSet {
        let coords: Vec<f64> = (0..60).map(|i| ((i * 29) % 61) as f64 / 61.0 - 0.5).collect();
        PointSet::new(coords, 3).unwrap()
    }

    #[test]
    fn rebuild_is_byte_identical_and_round_trips() {
        let pts = points();
        let k = KernelSpec::exponential(0.8);
        let s = make_exponential_hbe(pts.diameter_bound() / 0.8, 0.5).unwrap();
        let a = build_index(&pts, &k, &s, 12, 77).unwrap().to_bytes();
        let b = build_index(&pts, &k, &s, 12, 77).unwrap().to_bytes();
        assert_eq!(a, b);
        let back = HbeIndex::from_bytes(&a, &pts).unwrap();
        assert_eq!(back.to_bytes(), a);
        let c = build_index(&pts, &k, &s, 12, 78).unwrap().to_bytes();
        assert_ne!(a, c);
    }

    #[test]
    fn ball_index_round_trips() {
        let pts = points();
        let k = KernelSpec::gaussian(1.0);
        let s = make_gaussian_ball_hbe(pts.diameter_bound(), 0.5).unwrap();
        let idx = build_index(&pts, &k, &s, 3, 5).unwrap();
        let bytes = idx.to_bytes();
        let back = HbeIndex::from_bytes(&bytes, &pts).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        for i in 0..3 {
            assert_eq!(back.buckets(i).unwrap(), idx.buckets(i).unwrap());
        }
    }

    #[test]
    fn mismatched_dataset_is_rejected() {
        let pts = points();
        let k = KernelSpec::t_student(2, 1.0);
        let s = make_student_hbe(2, 1).unwrap();
        let bytes = HbeIndex::build(&pts, &k, &s, &IndexOptions::implicit(5, 1)).unwrap().to_bytes();
        let other = pts.scaled(1.5);
        assert!(matches!(HbeIndex::from_bytes(&bytes, &other), Err(HbeError::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(HbeIndex::from_bytes(&bad, &pts), Err(HbeError::Format(_))));
    }
}
