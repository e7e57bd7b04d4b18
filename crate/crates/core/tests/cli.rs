use std::path::Path;
use std::process::{Command, Output};

use srclab::numerics::{read_labels, read_matrix, read_vector};

fn srclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srclab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = srclab(args);
    assert!(
        out.status.success(),
        "srclab {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn value<'a>(stdout: &'a str, key: &str) -> &'a str {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing from {stdout}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_staged_then_solve_and_classify() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("db");
    ok(&[
        "gen",
        "staged",
        "--n0",
        "5",
        "--m",
        "30",
        "--L",
        "8",
        "--stage",
        "2",
        "--seed",
        "4",
        "--zeta",
        "0.01",
        "-o",
        p(&db),
    ]);
    let x = read_matrix(&db.join("X_tr.csv")).unwrap();
    assert_eq!((x.rows(), x.cols()), (30, 40));
    let labels = read_labels(&db.join("labels.csv")).unwrap();
    assert_eq!(labels.len(), 40);
    assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 5);
    let y0 = read_vector(&db.join("y0.csv")).unwrap();
    let y = read_vector(&db.join("y.csv")).unwrap();
    assert_ne!(y0, y);

    let coef = dir.path().join("coef.csv");
    let stdout = ok(&[
        "solve",
        "--mode",
        "bp",
        p(&db.join("X_tr.csv")),
        p(&db.join("y0.csv")),
        "-o",
        p(&coef),
    ]);
    let diag = stdout.trim();
    assert!(diag.starts_with("residual="), "{diag}");
    let alpha = read_vector(&coef).unwrap();
    let alpha0 = read_vector(&db.join("alpha0.csv")).unwrap();
    let gap = alpha
        .iter()
        .zip(&alpha0)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(gap < 1e-6, "bp recovery gap {gap}");

    let stdout = ok(&[
        "src",
        p(&db.join("X_tr.csv")),
        p(&db.join("labels.csv")),
        p(&db.join("y.csv")),
        "--eps",
        "0.05",
    ]);
    assert_eq!(value(&stdout, "label"), "1");
}

#[test]
fn coherence_reports_certificates() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x.csv");
    // the largest overlap is between the last two columns, cos(30°)
    std::fs::write(&x, "2,3\n1,0.5,0\n0,0.8660254037844386,1\n").unwrap();
    let csv = dir.path().join("c.csv");
    let stdout = ok(&["coherence", p(&x), "--k", "1", "--csv", p(&csv)]);
    let mu: f64 = value(&stdout, "mu").parse().unwrap();
    assert!((mu - 0.8660254037844386).abs() < 1e-12);
    assert_eq!(value(&stdout, "verdict_noiseless"), "true");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("mu,welch_bound,slack,k_max_noiseless,k_max_noisy,k,"));
}

#[test]
fn gen_toy_then_ksrc() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("toy");
    ok(&[
        "gen",
        "toy",
        "--n0",
        "3",
        "--m",
        "15",
        "--L",
        "4",
        "--eta",
        "0.1",
        "--seed",
        "2",
        "-o",
        p(&db),
    ]);
    let tests = read_matrix(&db.join("tests.csv")).unwrap();
    assert_eq!((tests.rows(), tests.cols()), (12, 13));
    let stdout = ok(&[
        "ksrc",
        p(&db.join("X_tr.csv")),
        p(&db.join("labels.csv")),
        "--sigma",
        "1",
        "--tests",
        p(&db.join("tests.csv")),
    ]);
    assert_eq!(stdout.lines().filter(|l| l.ends_with(",true")).count(), 12);
    assert!(value(&stdout, "accuracy").parse::<f64>().unwrap() >= 0.0);
}

#[test]
fn exp_flags_and_config_file_agree() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&[
        "exp",
        "noise_free",
        "--db",
        "DB-2",
        "--stages",
        "1..3",
        "--trials",
        "3",
        "--seed",
        "8",
        "--raw",
        "-o",
        p(&a),
    ]);
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(
        &cfg,
        "# same run\ndb=DB-2\nstages=1,2,3\ntrials=3\nseed=8\nraw=true\n",
    )
    .unwrap();
    ok(&["exp", "noise_free", "--config", p(&cfg), "-o", p(&b)]);
    for name in ["recovery.csv", "raw.csv"] {
        let x = std::fs::read(a.join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.join(name)).unwrap(), "{name} differs");
    }
    let text = std::fs::read_to_string(a.join("recovery.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn bad_input_exits_nonzero() {
    let out = srclab(&[
        "solve",
        "--mode",
        "lasso",
        "/nonexistent/x.csv",
        "/nonexistent/y.csv",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = srclab(&["exp", "noise_free", "--stages", "0..3", "-o", "/tmp/unused"]);
    assert!(!out.status.success());
}
