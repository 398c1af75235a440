//! Dataset and vector files.

use std::fmt::Write as _;
use std::path::Path;

use super::config::DataFormat;
use crate::error::{HbeError, Result};
use crate::kernels::PointSet;

pub const DATASET_MAGIC: &[u8; 4] = b"KDS1";
pub const VECTOR_MAGIC: &[u8; 4] = b"VEC1";

fn parse_err<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(HbeError::Parse { line, msg: msg.into() })
}

fn parse_field(s: &str, line: usize) -> Result<f64> {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => parse_err(line, format!("non-finite value {v}")),
        Err(_) => parse_err(line, format!("cannot parse {:?} as a number", s.trim())),
    }
}

/// Parses comma-separated rows; a first row with any non-numeric field is a header.
pub fn parse_csv(text: &str) -> Result<(Vec<f64>, usize)> {
    let mut coords = Vec::new();
    let mut d = 0;
    let mut first = true;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if first {
            first = false;
            if fields.iter().any(|f| f.trim().parse::<f64>().is_err()) {
                continue;
            }
        }
        if d == 0 {
            d = fields.len();
        } else if fields.len() != d {
            return parse_err(i + 1, format!("expected {d} fields, found {}", fields.len()));
        }
        for f in fields {
            coords.push(parse_field(f, i + 1)?);
        }
    }
    if coords.is_empty() {
        return Err(HbeError::Input("dataset has no rows".into()));
    }
    Ok((coords, d))
}

pub fn parse_bin(bytes: &[u8]) -> Result<(Vec<f64>, usize)> {
    if bytes.len() < 12 || &bytes[..4] != DATASET_MAGIC {
        return Err(HbeError::Format("dataset file does not start with KDS1".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != n * d * 8 {
        return Err(HbeError::Format(format!("expected {} bytes of coordinates for {n}×{d}, found {}", n * d * 8, body.len())));
    }
    let coords = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((coords, d))
}

/// Loads a dataset; `radius` replaces the computed diameter bound when given.
pub fn load_dataset(path: &Path, format: DataFormat, radius: Option<f64>) -> Result<PointSet> {
    let (coords, d) = match format {
        DataFormat::Csv => parse_csv(&std::fs::read_to_string(path)?)?,
        DataFormat::Bin => parse_bin(&std::fs::read(path)?)?,
    };
    match radius {
        Some(r) => PointSet::with_bound(coords, d, r),
        None => PointSet::new(coords, d),
    }
}

pub fn dataset_bytes(points: &PointSet, format: DataFormat) -> Vec<u8> {
    match format {
        DataFormat::Csv => {
            let mut s = String::new();
            for p in points.iter() {
                let row: Vec<String> = p.iter().map(f64::to_string).collect();
                s.push_str(&row.join(","));
                s.push('\n');
            }
            s.into_bytes()
        }
        DataFormat::Bin => {
            let mut out = Vec::with_capacity(12 + points.coords().len() * 8);
            out.extend_from_slice(DATASET_MAGIC);
            out.extend_from_slice(&(points.n() as u32).to_le_bytes());
            out.extend_from_slice(&(points.d() as u32).to_le_bytes());
            for v in points.coords() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out
        }
    }
}

pub fn save_dataset(points: &PointSet, path: &Path, format: DataFormat) -> Result<()> {
    write_atomic(path, &dataset_bytes(points, format))
}

/// Whether a vector file was text (one value per line) or a binary block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorFormat {
    Text,
    Binary,
}

pub fn parse_vector(bytes: &[u8]) -> Result<(Vec<f64>, VectorFormat)> {
    if bytes.starts_with(VECTOR_MAGIC) {
        if bytes.len() < 8 {
            return Err(HbeError::Format("truncated vector header".into()));
        }
        let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = &bytes[8..];
        if body.len() != n * 8 {
            return Err(HbeError::Format(format!("expected {n} vector entries, found {} bytes", body.len())));
        }
        let v: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(HbeError::Format("non-finite vector entry".into()));
        }
        return Ok((v, VectorFormat::Binary));
    }
    let text = std::str::from_utf8(bytes).map_err(|_| HbeError::Format("vector file is neither VEC1 nor text".into()))?;
    let mut v = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if !line.trim().is_empty() {
            v.push(parse_field(line, i + 1)?);
        }
    }
    Ok((v, VectorFormat::Text))
}

pub fn vector_bytes(v: &[f64], format: VectorFormat) -> Vec<u8> {
    match format {
        VectorFormat::Text => {
            let mut s = String::new();
            for x in v {
                writeln!(s, "{x}").unwrap();
            }
            s.into_bytes()
        }
        VectorFormat::Binary => {
            let mut out = Vec::with_capacity(8 + 8 * v.len());
            out.extend_from_slice(VECTOR_MAGIC);
            out.extend_from_slice(&(v.len() as u32).to_le_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out
        }
    }
}

/// Writes through a sibling temporary file so a failed run leaves no partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    std::io::Write::write_all(&mut tmp, bytes)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(path).map_err(|e| HbeError::Io(e.error))?;
    Ok(())
}
