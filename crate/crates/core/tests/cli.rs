use std::fs;
use std::path::{Path, PathBuf};

use hbe::cli::{self, DataFormat};
use hbe::PointSet;

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["hbe"];
    full.extend_from_slice(args);
    match cli::run(full) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e:#}");
            2
        }
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_points(dir: &Path, name: &str, rows: &[Vec<f64>]) -> PathBuf {
    let p = dir.join(name);
    cli::save_dataset(&PointSet::from_rows(rows).unwrap(), &p, DataFormat::Csv).unwrap();
    p
}

fn blob(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut state = seed;
    let mut next = move || {
        state = hbe::seed::splitmix64(state);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    (0..n).map(|_| (0..d).map(|_| next()).collect()).collect()
}

#[test]
fn build_then_query_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_points(dir.path(), "data.csv", &blob(150, 3, 1));
    let queries = write_points(dir.path(), "q.csv", &blob(4, 3, 2));
    let mut outputs = Vec::new();
    for round in 0..2 {
        let idx = dir.path().join(format!("idx{round}.hbe"));
        let out = dir.path().join(format!("out{round}.csv"));
        let common = ["--kernel", "exponential", "--method", "hbe-exp", "--eps", "0.5", "--tau", "0.1", "--seed", "7"];
        let mut b = vec!["build", "--data", s(&data), "--index", s(&idx)];
        b.extend(common);
        assert_eq!(run(&b), 0);
        let mut q = vec!["query", "--data", s(&data), "--index", s(&idx), "--queries", s(&queries), "--out", s(&out)];
        q.extend(common);
        assert_eq!(run(&q), 0);
        outputs.push((fs::read(&idx).unwrap(), fs::read(&out).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs[0].1.clone()).unwrap();
    assert!(text.starts_with("query_id,estimate,below_threshold,samples_used\n"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn manifest_rejects_a_different_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_points(dir.path(), "data.csv", &blob(50, 2, 3));
    let other = write_points(dir.path(), "other.csv", &blob(50, 2, 4));
    let queries = write_points(dir.path(), "q.csv", &blob(2, 2, 5));
    let idx = dir.path().join("idx.hbe");
    let out = dir.path().join("out.csv");
    let common = ["--kernel", "exponential", "--method", "hbe-exp", "--tables", "50"];
    let mut b = vec!["build", "--data", s(&data), "--index", s(&idx)];
    b.extend(common);
    assert_eq!(run(&b), 0);
    let mut q = vec!["query", "--data", s(&other), "--index", s(&idx), "--queries", s(&queries), "--out", s(&out)];
    q.extend(common);
    assert_ne!(run(&q), 0);
    assert!(!out.exists(), "no output may be written on failure");
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_points(dir.path(), "data.csv", &blob(80, 2, 6));
    let queries = write_points(dir.path(), "q.csv", &blob(3, 2, 7));
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, format!("kernel = gaussian\nmethod = rs\neps = 0.9\ntau = 0.05\ndata = {}\nqueries = {}\n", s(&data), s(&queries))).unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert_eq!(run(&["query", "--config", s(&cfg), "--out", s(&a)]), 0);
    assert_eq!(run(&["query", "--config", s(&cfg), "--eps", "0.3", "--out", s(&b)]), 0);
    let samples = |p: &Path| -> u64 {
        fs::read_to_string(p).unwrap().lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum()
    };
    assert!(samples(&b) > samples(&a));

    let bad = dir.path().join("bad.csv");
    assert_ne!(run(&["query", "--config", s(&cfg), "--method", "hbe-student", "--out", s(&bad)]), 0);
    assert_ne!(run(&["query", "--config", s(&cfg), "--set", "tau=1.5", "--out", s(&bad)]), 0);
    assert!(!bad.exists());
}

#[test]
fn verify_passes_on_the_default_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("verify.csv");
    assert_eq!(run(&["verify", "--out", s(&out)]), 0);
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("check,instances,violations,worst_slack\n"));
    for line in text.lines().skip(1) {
        assert_eq!(line.split(',').nth(2), Some("0"), "{line}");
    }
}

#[test]
fn kmvm_writes_vector_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<Vec<f64>> = (0..120).map(|i| vec![(i as f64 * 0.37).sin()]).collect();
    let data = write_points(dir.path(), "data.csv", &rows);
    let points = PointSet::from_rows(&rows).unwrap();
    let z: Vec<f64> = (0..120).map(|i| if i % 5 == 0 { -0.5 } else { 1.0 + (i % 7) as f64 * 0.1 }).collect();
    let kernel = hbe::KernelSpec::exponential(1.0);
    let y = hbe::kmvm::dense_product(&points, &kernel, &z).unwrap();
    let zp = dir.path().join("z.bin");
    let yp = dir.path().join("y.bin");
    fs::write(&zp, cli::data::vector_bytes(&z, cli::VectorFormat::Binary)).unwrap();
    fs::write(&yp, cli::data::vector_bytes(&y, cli::VectorFormat::Binary)).unwrap();
    let out = dir.path().join("yhat.bin");
    let args = ["kmvm", "--kernel", "exponential", "--method", "hbe-exp", "--data", s(&data), "--vector", s(&zp), "--oracle", s(&yp), "--out", s(&out)];
    let mut with_crossover = args.to_vec();
    with_crossover.extend(["--set", "crossover=1000"]);
    assert_eq!(run(&with_crossover), 0);
    let (yhat, fmt) = cli::data::parse_vector(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(fmt, cli::VectorFormat::Binary);
    for (a, b) in yhat.iter().zip(&y) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
    let report = fs::read_to_string(dir.path().join("yhat.bin.report.csv")).unwrap();
    assert!(report.lines().skip(1).all(|l| l.ends_with(",true")), "{report}");
}

#[test]
fn thread_cap_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_points(dir.path(), "data.csv", &blob(60, 2, 8));
    let queries = write_points(dir.path(), "q.csv", &blob(6, 2, 9));
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let args = |out: &PathBuf| -> Vec<String> {
        ["query", "--kernel", "gaussian", "--method", "rs", "--eps", "0.5", "--tau", "0.05", "--data", s(&data), "--queries", s(&queries), "--out", s(out)]
            .iter()
            .map(|x| x.to_string())
            .collect()
    };
    assert_eq!(run(&args(&a).iter().map(String::as_str).collect::<Vec<_>>()), 0);
    std::env::set_var("HBE_THREADS", "1");
    let code = run(&args(&b).iter().map(String::as_str).collect::<Vec<_>>());
    std::env::remove_var("HBE_THREADS");
    assert_eq!(code, 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

/// Two clusters: one point at the query and the rest near distance 7, so the
/// density at the query is about 2·10⁻³.
#[test]
fn bench_hbe_uses_fewer_samples_than_rs_at_small_density() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = vec![vec![0.0]];
    rows.extend((1..1000).map(|i| vec![7.0 + 0.2 * i as f64 / 1000.0]));
    let data = write_points(dir.path(), "two.csv", &rows);
    let queries = write_points(dir.path(), "q.csv", &[vec![0.0]]);
    let out = dir.path().join("bench.csv");
    let code = run(&[
        "bench", "--kernel", "exponential", "--method", "hbe-exp", "--beta", "0.5", "--eps", "0.5", "--tau", "1e-3", "--data", s(&data),
        "--queries", s(&queries), "--out", s(&out), "--set", "methods=hbe-exp,rs", "--set", "timing=off", "--set", "radius=7.2",
    ]);
    assert_eq!(code, 0);
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let samples = |m: &str| rows.iter().find(|r| r[0] == m).unwrap()[5].parse::<u64>().unwrap();
    let mu: f64 = rows[0][2].parse().unwrap();
    assert!(mu > 1e-3 && mu < 3e-3, "{mu}");
    assert!(samples("hbe-exp") < samples("rs"), "{text}");
    assert!(rows.iter().all(|r| r[6] == "0"));
}
