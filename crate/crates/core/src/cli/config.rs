//! `key = value` run configuration with command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{HbeError, Result};
use crate::hbe::Storage;
use crate::kernels::{KernelKind, KernelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    HbeExp,
    HbeStudent,
    HbeGaussEuclid,
    HbeGaussBall,
    Rs,
    Rff,
}

impl Method {
    pub fn is_hbe(&self) -> bool {
        !matches!(self, Method::Rs | Method::Rff)
    }
}

impl FromStr for Method {
    type Err = HbeError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "hbe-exp" => Method::HbeExp,
            "hbe-student" => Method::HbeStudent,
            "hbe-gauss-euclid" => Method::HbeGaussEuclid,
            "hbe-gauss-ball" => Method::HbeGaussBall,
            "rs" => Method::Rs,
            "rff" => Method::Rff,
            _ => return Err(HbeError::Config(format!("unknown method {s:?}"))),
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::HbeExp => "hbe-exp",
            Method::HbeStudent => "hbe-student",
            Method::HbeGaussEuclid => "hbe-gauss-euclid",
            Method::HbeGaussBall => "hbe-gauss-ball",
            Method::Rs => "rs",
            Method::Rff => "rff",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Bin,
}

impl FromStr for DataFormat {
    type Err = HbeError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "bin" => Ok(DataFormat::Bin),
            _ => Err(HbeError::Config(format!("unknown format {s:?}, expected csv or bin"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kernel: String,
    pub bandwidth: f64,
    pub p: u32,
    pub q: u32,
    pub method: Method,
    pub methods: Vec<Method>,
    pub eps: f64,
    pub tau: f64,
    pub chi: f64,
    pub alpha: f64,
    pub beta: f64,
    pub t: f64,
    pub slack: f64,
    pub seed: u64,
    pub format: DataFormat,
    pub storage: Storage,
    pub tables: Option<u64>,
    pub c_n: f64,
    pub radius: Option<f64>,
    pub memory_limit_mb: u64,
    pub crossover: usize,
    pub timing: bool,
    pub verify_instances: u64,
    pub data: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub vector: Option<PathBuf>,
    pub oracle: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kernel: "gaussian".into(),
            bandwidth: 1.0,
            p: 2,
            q: 1,
            method: Method::HbeGaussBall,
            methods: Vec::new(),
            eps: 0.3,
            tau: 1e-3,
            chi: 0.1,
            alpha: 1.0,
            beta: 0.5,
            t: 1.0,
            slack: crate::hbe::DEFAULT_SLACK,
            seed: 0,
            format: DataFormat::Csv,
            storage: Storage::Auto,
            tables: None,
            c_n: 1.0,
            radius: None,
            memory_limit_mb: crate::hbe::DEFAULT_MEMORY_LIMIT >> 20,
            crossover: 64,
            timing: true,
            verify_instances: 10_000,
            data: None,
            index: None,
            queries: None,
            vector: None,
            oracle: None,
            out: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| HbeError::Config(format!("cannot parse {key} = {value:?}")))
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(HbeError::Config(msg.into()))
}

/// Splits `key=value` text into pairs, skipping blank lines and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(HbeError::Parse { line: i + 1, msg: format!("expected key = value, got {line:?}") });
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(PathBuf::from(value));
        match key {
            "kernel" => self.kernel = value.to_string(),
            "bandwidth" | "sigma" => self.bandwidth = parse(key, value)?,
            "p" => self.p = parse(key, value)?,
            "q" => self.q = parse(key, value)?,
            "method" => self.method = value.parse()?,
            "methods" => {
                self.methods = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect::<Result<_>>()?
            }
            "eps" => self.eps = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "chi" => self.chi = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "t" => self.t = parse(key, value)?,
            "slack" => self.slack = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "format" => self.format = value.parse()?,
            "storage" => {
                self.storage = match value {
                    "materialized" => Storage::Materialized,
                    "implicit" => Storage::Implicit,
                    "auto" => Storage::Auto,
                    _ => return config_err(format!("unknown storage {value:?}")),
                }
            }
            "tables" => self.tables = Some(parse(key, value)?),
            "c_n" => self.c_n = parse(key, value)?,
            "radius" => self.radius = Some(parse(key, value)?),
            "memory_limit_mb" => self.memory_limit_mb = parse(key, value)?,
            "crossover" => self.crossover = parse(key, value)?,
            "timing" => {
                self.timing = match value {
                    "on" | "true" | "1" => true,
                    "off" | "false" | "0" => false,
                    _ => return config_err(format!("timing must be on or off, got {value:?}")),
                }
            }
            "verify_instances" => self.verify_instances = parse(key, value)?,
            "data" => self.data = path(),
            "index" => self.index = path(),
            "queries" => self.queries = path(),
            "vector" => self.vector = path(),
            "oracle" => self.oracle = path(),
            "out" => self.out = path(),
            _ => return config_err(format!("unknown configuration key {key:?}")),
        }
        Ok(())
    }

    /// File settings first, then overrides in order; the result is validated.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(f) = file {
            let text = std::fs::read_to_string(f)?;
            for (k, v) in parse_pairs(&text)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        let kind = match self.kernel.as_str() {
            "gaussian" => KernelKind::Gaussian,
            "exponential" => KernelKind::Exponential,
            "student" | "t-student" => KernelKind::TStudent { p: self.p },
            k => return config_err(format!("unknown kernel {k:?}, expected gaussian, exponential or student")),
        };
        Ok(KernelSpec { kind, bandwidth: self.bandwidth })
    }

    pub fn validate(&self) -> Result<()> {
        let kernel = self.kernel_spec()?;
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return config_err(format!("bandwidth must be positive, got {}", self.bandwidth));
        }
        let unit = |name: &str, v: f64, owner: &str| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                config_err(format!("{name} = {v} must lie in (0, 1) ({owner})"))
            }
        };
        unit("eps", self.eps, "relative accuracy of the density query")?;
        unit("tau", self.tau, "density threshold of the density query")?;
        unit("chi", self.chi, "failure probability of the density query")?;
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return config_err(format!("alpha = {} must lie in (0, 1] (adaptive mean relaxation)", self.alpha));
        }
        if !(self.c_n > 0.0 && self.c_n.is_finite()) {
            return config_err("c_n must be positive");
        }
        if self.tables == Some(0) {
            return config_err("tables must be at least 1");
        }
        if let Some(r) = self.radius {
            if !(r > 0.0 && r.is_finite()) {
                return config_err(format!("radius must be positive, got {r}"));
            }
        }
        for m in std::iter::once(&self.method).chain(&self.methods) {
            self.check_method(*m, &kernel)?;
        }
        Ok(())
    }

    fn check_method(&self, m: Method, kernel: &KernelSpec) -> Result<()> {
        let need = |ok: bool, what: &str| if ok { Ok(()) } else { config_err(format!("method {m} requires {what}")) };
        match m {
            Method::HbeExp => {
                need(kernel.kind == KernelKind::Exponential, "kernel = exponential")?;
                need(self.beta > 0.0 && self.beta <= 1.0, "beta in (0, 1] (scale-free exponential-kernel estimator)")
            }
            Method::HbeStudent => {
                need(matches!(kernel.kind, KernelKind::TStudent { .. }), "kernel = student")?;
                need(self.q >= 1 && self.q <= self.p, "1 ≤ q ≤ p (t-Student estimator, scale exponent q/p ≤ 1)")
            }
            Method::HbeGaussEuclid => {
                need(kernel.kind == KernelKind::Gaussian, "kernel = gaussian")?;
                need(self.t >= 1.0, "t ≥ 1 (Gaussian estimator on line partitions, 1 ≤ t ≤ R)")
            }
            Method::HbeGaussBall => {
                need(kernel.kind == KernelKind::Gaussian, "kernel = gaussian")?;
                need(self.beta > 0.0 && self.beta <= 1.0, "beta in (0, 1] (scale-free Gaussian estimator on ball carving)")?;
                need(self.slack >= 0.0, "slack ≥ 0")
            }
            Method::Rs => Ok(()),
            Method::Rff => need(kernel.kind == KernelKind::Gaussian, "kernel = gaussian (random Fourier features)"),
        }
    }

    /// Canonical `key = value` listing of every parameter; file paths are left out.
    pub fn to_text(&self) -> String {
        let methods: Vec<String> = self.methods.iter().map(Method::to_string).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("kernel", self.kernel.clone());
        kv("bandwidth", self.bandwidth.to_string());
        kv("p", self.p.to_string());
        kv("q", self.q.to_string());
        kv("method", self.method.to_string());
        kv("methods", methods.join(","));
        kv("eps", self.eps.to_string());
        kv("tau", self.tau.to_string());
        kv("chi", self.chi.to_string());
        kv("alpha", self.alpha.to_string());
        kv("beta", self.beta.to_string());
        kv("t", self.t.to_string());
        kv("slack", self.slack.to_string());
        kv("seed", self.seed.to_string());
        kv("storage", self.storage.name().to_string());
        kv("tables", self.tables.map(|t| t.to_string()).unwrap_or_default());
        kv("c_n", self.c_n.to_string());
        kv("radius", self.radius.map(|r| r.to_string()).unwrap_or_default());
        s
    }
}
