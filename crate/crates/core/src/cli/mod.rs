//! Command-line driver: `hbe build|query|bench|kmvm|verify`.

pub mod config;
pub mod data;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub use config::{DataFormat, Method, RunConfig};
pub use data::{load_dataset, save_dataset, write_atomic, VectorFormat};

use crate::diagnostics::{run_inequality_suite, run_sandwich_suite, write_report};
use crate::error::{HbeError, Result};
use crate::estimation::{query_budget, query_with_alpha, required_tables, EstimateReport, EstimatorHandle, RffSampler, RsSampler};
use crate::hbe::serial::{dataset_checksum, hex};
use crate::hbe::{
    make_exponential_hbe, make_gaussian_ball_hbe_with_slack, make_gaussian_euclid_hbe, make_student_hbe, HbeIndex, HbeScheme,
    IndexOptions, VarianceModel,
};
use crate::kernels::{kde_exact, KernelSpec, PointSet};
use crate::kmvm::{dense_product, kmvm_signed, KmvmOptions};
use crate::seed::{stream, TAG_BENCH, TAG_QUERY};

#[derive(Debug, Parser)]
#[command(name = "hbe", version, about = "Kernel density queries with hashing-based estimators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an index over `data` and write it with a manifest to `index`.
    Build(Flags),
    /// Estimate the density at every row of `queries`.
    Query(Flags),
    /// Compare methods against exact densities at every row of `queries`.
    Bench(Flags),
    /// Approximate the kernel matrix times the vector in `vector`.
    Kmvm(Flags),
    /// Run the inequality and collision-probability sweeps.
    Verify(Flags),
}

#[derive(Debug, Args, Default)]
pub struct Flags {
    /// `key = value` configuration file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub bandwidth: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub eps: Option<String>,
    #[arg(long)]
    pub tau: Option<String>,
    #[arg(long)]
    pub chi: Option<String>,
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub beta: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Dataset format, csv or bin.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub storage: Option<String>,
    #[arg(long)]
    pub tables: Option<String>,
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub index: Option<String>,
    #[arg(long)]
    pub queries: Option<String>,
    #[arg(long)]
    pub vector: Option<String>,
    #[arg(long)]
    pub oracle: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// Any other configuration key, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Flags {
    pub fn into_config(self) -> Result<RunConfig> {
        let named = [
            ("kernel", self.kernel),
            ("bandwidth", self.bandwidth),
            ("method", self.method),
            ("eps", self.eps),
            ("tau", self.tau),
            ("chi", self.chi),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("seed", self.seed),
            ("format", self.format),
            ("storage", self.storage),
            ("tables", self.tables),
            ("data", self.data),
            ("index", self.index),
            ("queries", self.queries),
            ("vector", self.vector),
            ("oracle", self.oracle),
            ("out", self.out),
        ];
        let mut pairs: Vec<(String, String)> = named.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))).collect();
        for s in self.set {
            let Some((k, v)) = s.split_once('=') else {
                return Err(HbeError::Config(format!("--set expects key=value, got {s:?}")));
            };
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        RunConfig::load(self.config.as_deref(), &pairs)
    }
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| HbeError::Config(format!("missing required setting {key}")))
}

fn emit(out: &Option<PathBuf>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, bytes),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(bytes)?;
            so.flush()?;
            Ok(())
        }
    }
}

pub fn load_data(cfg: &RunConfig) -> Result<PointSet> {
    load_dataset(require(&cfg.data, "data")?, cfg.format, cfg.radius)
}

fn load_queries(cfg: &RunConfig, d: usize) -> Result<PointSet> {
    let q = load_dataset(require(&cfg.queries, "queries")?, cfg.format, None)?;
    if q.d() != d {
        return Err(HbeError::Input(format!("queries have dimension {}, data has {d}", q.d())));
    }
    Ok(q)
}

/// Scheme for `method` sized to the diameter bound of `points` at the configured bandwidth.
pub fn scheme_for(cfg: &RunConfig, method: Method, points: &PointSet) -> Result<HbeScheme> {
    let r = (points.diameter_bound() / cfg.bandwidth).max(1e-9);
    match method {
        Method::HbeExp => make_exponential_hbe(r, cfg.beta),
        Method::HbeStudent => make_student_hbe(cfg.p, cfg.q),
        Method::HbeGaussEuclid => make_gaussian_euclid_hbe(r.max(cfg.t), cfg.t),
        Method::HbeGaussBall => make_gaussian_ball_hbe_with_slack(r, cfg.beta, cfg.slack),
        Method::Rs | Method::Rff => Err(HbeError::Config(format!("method {method} does not use a hash index"))),
    }
}

/// Configured table count, else the larger of the provisioning formula and the query's worst-case sample budget.
pub fn table_count(cfg: &RunConfig, scheme: &HbeScheme) -> Result<u64> {
    if let Some(t) = cfg.tables {
        return Ok(t);
    }
    let v = |m: f64| scheme.variance.relative(m);
    Ok(required_tables(cfg.eps, cfg.chi, v(cfg.tau), cfg.c_n).max(query_budget(cfg.eps, cfg.tau, cfg.chi, cfg.alpha, v)?))
}

fn index_options(cfg: &RunConfig, tables: u64) -> IndexOptions {
    IndexOptions { storage: cfg.storage, memory_limit: cfg.memory_limit_mb << 20, ..IndexOptions::new(tables, cfg.seed) }
}

pub fn build_in_memory(cfg: &RunConfig, method: Method, points: &PointSet) -> Result<HbeIndex> {
    let scheme = scheme_for(cfg, method, points)?;
    HbeIndex::build(points, &cfg.kernel_spec()?, &scheme, &index_options(cfg, table_count(cfg, &scheme)?))
}

fn manifest_path(index: &Path) -> PathBuf {
    let mut s = index.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn sha_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn manifest_text(cfg: &RunConfig, index: &HbeIndex, index_bytes: &[u8]) -> String {
    let mut s = cfg.to_text();
    let s_ref = &mut s;
    let mut kv = |k: &str, v: String| writeln!(s_ref, "{k} = {v}").unwrap();
    kv("scheme", index.scheme().kind.name().to_string());
    kv("radius_unit", index.scheme().radius.to_string());
    kv("tables_built", index.tables().to_string());
    kv("n", index.n().to_string());
    kv("d", index.d().to_string());
    kv("dataset_sha256", hex(index.checksum()));
    kv("index_sha256", sha_hex(index_bytes));
    s
}

fn read_manifest(path: &Path) -> Result<Vec<(String, String)>> {
    config::parse_pairs(&std::fs::read_to_string(path)?)
}

/// Loads an index file, checking it against its manifest (when present) and the dataset.
pub fn load_index(path: &Path, points: &PointSet) -> Result<HbeIndex> {
    let bytes = std::fs::read(path)?;
    let mpath = manifest_path(path);
    if mpath.exists() {
        let manifest = read_manifest(&mpath)?;
        let get = |k: &str| manifest.iter().find(|(a, _)| a == k).map(|(_, v)| v.as_str());
        if get("index_sha256") != Some(sha_hex(&bytes).as_str()) {
            return Err(HbeError::Format(format!("index {} does not match its manifest", path.display())));
        }
        if get("dataset_sha256") != Some(hex(&dataset_checksum(points)).as_str()) {
            return Err(HbeError::Format("dataset checksum differs from the one recorded in the manifest".into()));
        }
    }
    HbeIndex::from_bytes(&bytes, points)
}

pub fn cmd_build(cfg: &RunConfig) -> Result<()> {
    if !cfg.method.is_hbe() {
        return Err(HbeError::Config(format!("method {} has no index to build", cfg.method)));
    }
    let out = require(&cfg.index, "index")?;
    let points = load_data(cfg)?;
    let index = build_in_memory(cfg, cfg.method, &points)?;
    let bytes = index.to_bytes();
    let manifest = manifest_text(cfg, &index, &bytes);
    write_atomic(out, &bytes)?;
    write_atomic(&manifest_path(out), manifest.as_bytes())
}

/// One density query with the configured method, reusing `index` for hashing-based methods.
pub fn run_query(cfg: &RunConfig, method: Method, points: &PointSet, index: Option<&HbeIndex>, x: &[f64], rng: crate::seed::Rng) -> Result<EstimateReport> {
    let kernel = cfg.kernel_spec()?;
    let (eps, tau, chi, alpha) = (cfg.eps, cfg.tau, cfg.chi, cfg.alpha);
    match method {
        Method::Rs => {
            let mut h = EstimatorHandle::new(RsSampler::new(points, &kernel, x, rng)?, |mu| VarianceModel::RandomSampling.relative(mu))?;
            query_with_alpha(&mut h, eps, tau, chi, alpha)
        }
        Method::Rff => {
            let mut h = EstimatorHandle::new(RffSampler::new(points, &kernel, x, rng)?, |mu| VarianceModel::Fourier.relative(mu))?;
            query_with_alpha(&mut h, eps, tau, chi, alpha)
        }
        _ => {
            let index = index.ok_or_else(|| HbeError::Config("hashing-based query without an index".into()))?;
            let session = index.session(x, rng)?;
            let mut h = EstimatorHandle::new(session, |mu| index.variance(mu))?;
            query_with_alpha(&mut h, eps, tau, chi, alpha)
        }
    }
}

fn check_kernel_matches(cfg: &RunConfig, index: &HbeIndex) -> Result<()> {
    let k = cfg.kernel_spec()?;
    if *index.kernel() != k {
        return Err(HbeError::Config(format!("index was built for {} but the configuration asks for {}", index.kernel().name(), k.name())));
    }
    if index.scheme().kind.name() != cfg.method.to_string() {
        return Err(HbeError::Config(format!("index uses {} but method = {}", index.scheme().kind.name(), cfg.method)));
    }
    Ok(())
}

pub fn query_csv(cfg: &RunConfig) -> Result<String> {
    let points = load_data(cfg)?;
    let queries = load_queries(cfg, points.d())?;
    let index = match (cfg.method.is_hbe(), &cfg.index) {
        (false, _) => None,
        (true, Some(p)) => {
            let idx = load_index(p, &points)?;
            check_kernel_matches(cfg, &idx)?;
            Some(idx)
        }
        (true, None) => Some(build_in_memory(cfg, cfg.method, &points)?),
    };
    let reports: Vec<EstimateReport> = (0..queries.n())
        .into_par_iter()
        .map(|q| run_query(cfg, cfg.method, &points, index.as_ref(), queries.point(q), stream(cfg.seed, TAG_QUERY, q as u64)))
        .collect::<Result<_>>()?;
    let mut s = String::from("query_id,estimate,below_threshold,samples_used\n");
    for (q, r) in reports.iter().enumerate() {
        writeln!(s, "{q},{},{},{}", r.value, r.below_threshold, r.samples_used).unwrap();
    }
    Ok(s)
}

pub fn cmd_query(cfg: &RunConfig) -> Result<()> {
    emit(&cfg.out, query_csv(cfg)?.as_bytes())
}

pub fn bench_csv(cfg: &RunConfig) -> Result<String> {
    let points = load_data(cfg)?;
    let queries = load_queries(cfg, points.d())?;
    let kernel = cfg.kernel_spec()?;
    let mut methods = if cfg.methods.is_empty() { vec![cfg.method, Method::Rs] } else { cfg.methods.clone() };
    methods.dedup();
    let truth: Vec<f64> = (0..queries.n()).map(|q| kde_exact(&points, &kernel, queries.point(q))).collect::<Result<_>>()?;
    let mut s = String::from("method,query_id,mu_true,estimate,rel_error,samples,wall_time_ns\n");
    for m in methods {
        let index = if m.is_hbe() { Some(build_in_memory(cfg, m, &points)?) } else { None };
        let rows: Vec<(EstimateReport, u128)> = (0..queries.n())
            .into_par_iter()
            .map(|q| {
                let start = Instant::now();
                let r = run_query(cfg, m, &points, index.as_ref(), queries.point(q), stream(cfg.seed, TAG_BENCH, q as u64))?;
                Ok((r, if cfg.timing { start.elapsed().as_nanos() } else { 0 }))
            })
            .collect::<Result<_>>()?;
        for (q, (r, ns)) in rows.iter().enumerate() {
            let mu = truth[q];
            writeln!(s, "{m},{q},{mu},{},{},{},{ns}", r.value, (r.value - mu).abs() / mu, r.samples_used).unwrap();
        }
    }
    Ok(s)
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<()> {
    emit(&cfg.out, bench_csv(cfg)?.as_bytes())
}

fn norm(v: impl Iterator<Item = f64>, p: f64) -> f64 {
    if p.is_infinite() {
        v.fold(0.0, |m, x| m.max(x.abs()))
    } else {
        v.map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// Error report of `y_hat` against `y`, with per-coordinate bound `ε(3τ‖z‖₁ + (K|z|)_i)`.
pub fn kmvm_report(points: &PointSet, kernel: &KernelSpec, z: &[f64], y_hat: &[f64], y: &[f64], eps: f64, tau: f64, chi: f64) -> Result<String> {
    if y.len() != y_hat.len() {
        return Err(HbeError::Input(format!("oracle has {} entries, expected {}", y.len(), y_hat.len())));
    }
    let z1: f64 = z.iter().map(|v| v.abs()).sum();
    let abs_y = if z.iter().any(|&v| v < 0.0) {
        dense_product(points, kernel, &z.iter().map(|v| v.abs()).collect::<Vec<_>>())?
    } else {
        y.to_vec()
    };
    let n = y.len();
    let err: Vec<f64> = y_hat.iter().zip(y).map(|(a, b)| a - b).collect();
    let within = err.iter().zip(&abs_y).filter(|(e, a)| e.abs() <= eps * (3.0 * tau * z1 + a.abs())).count();
    let frac = within as f64 / n as f64;
    let mut s = String::from("metric,value,bound,holds\n");
    writeln!(s, "coordinates_within_bound,{frac},{},{}", 1.0 - chi, frac >= 1.0 - chi).unwrap();
    for (name, p) in [("l1", 1.0), ("l2", 2.0), ("linf", f64::INFINITY)] {
        let e = norm(err.iter().copied(), p);
        let nf = if p.is_infinite() { 1.0 } else { (n as f64).powf(1.0 / p) };
        let b = eps * (3.0 * tau * z1 * nf + norm(abs_y.iter().copied(), p));
        writeln!(s, "error_{name},{e},{b},{}", e <= b).unwrap();
    }
    Ok(s)
}

pub fn cmd_kmvm(cfg: &RunConfig) -> Result<()> {
    let out = require(&cfg.out, "out")?;
    let points = load_data(cfg)?;
    let kernel = cfg.kernel_spec()?;
    let (z, vfmt) = data::parse_vector(&std::fs::read(require(&cfg.vector, "vector")?)?)?;
    let scheme = scheme_for(cfg, cfg.method, &points)?;
    let opts = KmvmOptions {
        crossover: cfg.crossover,
        storage: cfg.storage,
        c_n: cfg.c_n,
        memory_limit: cfg.memory_limit_mb << 20,
        ..KmvmOptions::new(scheme, cfg.seed)
    };
    let y_hat = kmvm_signed(&points, &kernel, &z, cfg.eps, cfg.tau, cfg.chi, &opts)?;
    let report = match &cfg.oracle {
        Some(p) => {
            let (y, _) = data::parse_vector(&std::fs::read(p)?)?;
            Some(kmvm_report(&points, &kernel, &z, &y_hat, &y, cfg.eps, cfg.tau, cfg.chi)?)
        }
        None => None,
    };
    write_atomic(out, &data::vector_bytes(&y_hat, vfmt))?;
    if let Some(r) = report {
        let mut p = out.as_os_str().to_owned();
        p.push(".report.csv");
        write_atomic(Path::new(&p), r.as_bytes())?;
    }
    Ok(())
}

/// Runs every sweep; the boolean tells whether all of them passed.
pub fn verify_csv(cfg: &RunConfig) -> Result<(String, bool)> {
    let mut rows = run_inequality_suite(cfg.seed, cfg.verify_instances)?;
    rows.extend(run_sandwich_suite()?);
    let mut buf = Vec::new();
    write_report(&mut buf, &rows)?;
    Ok((String::from_utf8(buf).expect("ascii report"), rows.iter().all(|r| r.passed())))
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<bool> {
    let (text, ok) = verify_csv(cfg)?;
    emit(&cfg.out, text.as_bytes())?;
    Ok(ok)
}

/// Parses `args` (program name first) and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> anyhow::Result<i32>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    let work = move || -> Result<i32> {
        match cli.command {
            Command::Build(f) => cmd_build(&f.into_config()?).map(|_| 0),
            Command::Query(f) => cmd_query(&f.into_config()?).map(|_| 0),
            Command::Bench(f) => cmd_bench(&f.into_config()?).map(|_| 0),
            Command::Kmvm(f) => cmd_kmvm(&f.into_config()?).map(|_| 0),
            Command::Verify(f) => cmd_verify(&f.into_config()?).map(|ok| if ok { 0 } else { 1 }),
        }
    };
    let threads = match std::env::var("HBE_THREADS") {
        Ok(v) => Some(v.parse::<usize>().map_err(|_| anyhow::anyhow!("HBE_THREADS must be a positive integer, got {v:?}"))?),
        Err(_) => None,
    };
    let code = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new().num_threads(t).build()?.install(work)?,
        None => work()?,
    };
    Ok(code)
}

pub fn main_entry() -> ExitCode {
    match run(std::env::args_os()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            if let Some(ce) = e.downcast_ref::<clap::Error>() {
                let _ = ce.print();
                return ExitCode::from(if ce.use_stderr() { 2 } else { 0 });
            }
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
