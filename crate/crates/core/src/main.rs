use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use srclab::classify::{gaussian_gram, ksrc_classify, src_classify, KcdConfig, KernelTestSample};
use srclab::coherence::{certificate, stability_constants};
use srclab::datagen::{
    add_noise, gen_kernel_test_samples, gen_staged, gen_toy_kernel_db, StagedDatabaseSpec,
};
use srclab::experiments::{self, ExperimentConfig};
use srclab::numerics::{
    format_f64, read_labels, read_matrix, read_vector, write_labels, write_matrix, write_vector,
    Mat,
};
use srclab::solvers::{
    l0_oracle, signal_error_bp, solve, CoefVector, SolverConfig, DEFAULT_SUPPORT_THRESHOLD,
    L0_RES_TOL,
};
use srclab::{Dictionary, Error, Result};

#[derive(Parser)]
#[command(
    name = "srclab",
    version,
    about = "Sparse representation classification lab"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mutual coherence and the recovery certificates it implies.
    Coherence {
        matrix: PathBuf,
        /// Support size to check against the certificates.
        #[arg(long)]
        k: Option<usize>,
        /// Also report the noisy stability constants for `k`.
        #[arg(long)]
        noisy: bool,
        /// Write the same values as a one-row CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Sparse coding of one sample.
    Solve(SolveArgs),
    /// Generate synthetic databases.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Sparse representation classification of one sample.
    Src {
        x: PathBuf,
        labels: PathBuf,
        y: PathBuf,
        /// Lasso penalty instead of basis pursuit.
        #[arg(long, conflicts_with_all = ["bp", "eps"])]
        lambda: Option<f64>,
        /// Basis pursuit (the default).
        #[arg(long)]
        bp: bool,
        /// Residual-constrained basis pursuit denoising.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Kernel sparse representation classification of test coefficients.
    Ksrc {
        x: PathBuf,
        labels: PathBuf,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 1e-10)]
        lambda: f64,
        /// Rows are `c` followed by the ground-truth label.
        #[arg(long)]
        tests: PathBuf,
        /// Scale each `c` to unit norm in kernel space.
        #[arg(long)]
        normalize: bool,
    },
    /// Run a Monte-Carlo study and write its CSV files.
    Exp(Box<ExpArgs>),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Bp,
    Lasso,
    Bpdn,
    Sigerr,
    Oracle,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, value_enum, default_value = "bp")]
    mode: Mode,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_SUPPORT_THRESHOLD)]
    tau: f64,
    #[arg(long)]
    kcap: Option<usize>,
    x: PathBuf,
    y: PathBuf,
    /// Coefficient output file.
    #[arg(short, long, default_value = "coef.csv")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum GenCommand {
    /// Staged database with one class-1 test sample.
    Staged {
        #[arg(long)]
        n0: usize,
        #[arg(long)]
        m: usize,
        #[arg(long = "L", alias = "l")]
        l: usize,
        #[arg(long)]
        stage: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Noise level; 0 writes `y.csv` equal to `y0.csv`.
        #[arg(long, default_value_t = 0.0)]
        zeta: f64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Toy kernel database with per-class kernel test samples.
    Toy {
        #[arg(long, default_value_t = 5)]
        n0: usize,
        #[arg(long, default_value_t = 50)]
        m: usize,
        #[arg(long = "L", alias = "l", default_value_t = 20)]
        l: usize,
        #[arg(long)]
        eta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Test samples per class (defaults to `n0`).
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ExpArgs {
    /// noise_free, asymptotic, vary_k, threshold, noisy, kernel_sweep,
    /// sigma_search, l0_crosscheck or kernel_l0.
    study: String,
    /// `key=value` lines applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    db: Option<String>,
    #[arg(long)]
    stages: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    zeta: Option<String>,
    #[arg(long = "C", alias = "c")]
    c: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    etas: Option<String>,
    #[arg(long)]
    sigma_grid: Option<String>,
    /// Any other setting, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    raw: bool,
    #[arg(short, long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Coherence {
            matrix,
            k,
            noisy,
            csv,
        } => cmd_coherence(&matrix, k, noisy, csv.as_deref()),
        Command::Solve(args) => cmd_solve(&args),
        Command::Gen(g) => cmd_gen(g),
        Command::Src {
            x,
            labels,
            y,
            lambda,
            bp: _,
            eps,
        } => cmd_src(&x, &labels, &y, lambda, eps),
        Command::Ksrc {
            x,
            labels,
            sigma,
            lambda,
            tests,
            normalize,
        } => cmd_ksrc(&x, &labels, sigma, lambda, &tests, normalize),
        Command::Exp(args) => cmd_exp(&args),
    }
}

fn load_dictionary(x: &Path, labels: Option<&Path>) -> Result<Dictionary> {
    let labels = labels.map(read_labels).transpose()?;
    Dictionary::from_raw(&read_matrix(x)?, labels)
}

fn opt(v: f64) -> String {
    if v.is_finite() {
        format_f64(v)
    } else {
        "inf".into()
    }
}

fn cmd_coherence(path: &Path, k: Option<usize>, noisy: bool, csv: Option<&Path>) -> Result<()> {
    let d = load_dictionary(path, None)?;
    let cert = certificate(&d)?;
    let mut kv: Vec<(String, String)> = vec![
        ("mu".into(), format_f64(cert.mu)),
        (
            "welch_bound".into(),
            cert.welch_bound.map_or("na".into(), format_f64),
        ),
        ("slack".into(), cert.slack().map_or("na".into(), format_f64)),
        ("k_max_noiseless".into(), opt(cert.k_max_noiseless)),
        ("k_max_noisy".into(), opt(cert.k_max_noisy)),
    ];
    if let Some(k) = k {
        kv.push(("k".into(), k.to_string()));
        kv.push((
            "verdict_noiseless".into(),
            cert.verdict_noiseless(k).to_string(),
        ));
        kv.push(("verdict_noisy".into(), cert.verdict_noisy(k).to_string()));
        if noisy {
            let s = stability_constants(cert.mu, k)?;
            kv.push(("beta".into(), format_f64(s.beta)));
            kv.push(("gamma".into(), s.gamma.map_or("na".into(), format_f64)));
            kv.push(("c".into(), s.c.map_or("na".into(), format_f64)));
        }
    }
    for (key, v) in &kv {
        println!("{key}={v}");
    }
    if let Some(p) = csv {
        let header: Vec<&str> = kv.iter().map(|(k, _)| k.as_str()).collect();
        let row: Vec<&str> = kv.iter().map(|(_, v)| v.as_str()).collect();
        let text = format!("{}\n{}\n", header.join(","), row.join(","));
        std::fs::write(p, text).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn cmd_solve(a: &SolveArgs) -> Result<()> {
    let d = load_dictionary(&a.x, None)?;
    let y = read_vector(&a.y)?;
    let require = |v: Option<f64>, name: &str| {
        v.ok_or_else(|| Error::InvalidParameter(format!("--{name} is required for this mode")))
    };
    let (coef, residual, iterations): (CoefVector, f64, usize) = match a.mode {
        Mode::Bp | Mode::Lasso | Mode::Bpdn => {
            let mut cfg = match a.mode {
                Mode::Lasso => SolverConfig::lasso(require(a.lambda, "lambda")?),
                Mode::Bpdn => SolverConfig::bpdn(require(a.eps, "eps")?),
                _ => SolverConfig::default(),
            };
            cfg.support_threshold = a.tau;
            let s = solve(&d, &y, &cfg)?;
            (s.coef, s.residual, s.iterations)
        }
        Mode::Sigerr => {
            let (coef, err) = signal_error_bp(&d, &y)?;
            let fit = d.matrix().matvec(&coef.entries);
            let r: f64 = y
                .iter()
                .zip(&fit)
                .zip(&err)
                .map(|((y, f), e)| (y - f - e).powi(2))
                .sum::<f64>()
                .sqrt();
            (coef, r, 0)
        }
        Mode::Oracle => {
            let kcap = a
                .kcap
                .ok_or_else(|| Error::InvalidParameter("--kcap is required for oracle".into()))?;
            let coef = l0_oracle(&d, &y, kcap, L0_RES_TOL)?;
            let fit = d.matrix().matvec(&coef.entries);
            let r = y
                .iter()
                .zip(&fit)
                .map(|(y, f)| (y - f).powi(2))
                .sum::<f64>()
                .sqrt();
            (coef, r, 0)
        }
    };
    let coef = coef.with_threshold(a.tau);
    write_vector(&a.out, &coef.entries)?;
    println!(
        "residual={} l1={} l0={} iterations={}",
        format_f64(residual),
        format_f64(coef.l1()),
        coef.l0(),
        iterations
    );
    Ok(())
}

fn cmd_gen(g: GenCommand) -> Result<()> {
    match g {
        GenCommand::Staged {
            n0,
            m,
            l,
            stage,
            seed,
            zeta,
            out,
        } => {
            let spec = StagedDatabaseSpec {
                n0,
                m,
                l,
                stage,
                seed,
            };
            let mut inst = gen_staged(&spec)?;
            if zeta > 0.0 {
                inst = add_noise(&inst, zeta, srclab::datagen::derive_seed(seed, 0, "noise"))?;
            }
            create_dir(&out)?;
            write_matrix(&out.join("X_tr.csv"), inst.dictionary.matrix())?;
            write_labels(
                &out.join("labels.csv"),
                inst.dictionary.labels().unwrap_or(&[]),
            )?;
            write_vector(&out.join("alpha0.csv"), &inst.alpha0.entries)?;
            write_vector(&out.join("y0.csv"), &inst.y0)?;
            write_vector(&out.join("y.csv"), inst.observed())?;
        }
        GenCommand::Toy {
            n0,
            m,
            l,
            eta,
            seed,
            per_class,
            out,
        } => {
            let d = gen_toy_kernel_db(n0, m, l, eta, seed)?;
            // σ does not affect the coefficient draws, only the Gram matrix
            let model = gaussian_gram(&d, 1.0)?;
            let tests = gen_kernel_test_samples(
                &model,
                per_class.unwrap_or(n0),
                srclab::datagen::derive_seed(seed, 0, "tests"),
            )?;
            create_dir(&out)?;
            write_matrix(&out.join("X_tr.csv"), d.matrix())?;
            write_labels(&out.join("labels.csv"), d.labels().unwrap_or(&[]))?;
            write_matrix(&out.join("tests.csv"), &tests_matrix(&tests)?)?;
        }
    }
    Ok(())
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn tests_matrix(tests: &[KernelTestSample]) -> Result<Mat> {
    let rows: Vec<Vec<f64>> = tests
        .iter()
        .map(|t| {
            let mut r = t.coefs.entries.clone();
            r.push(t.label as f64);
            r
        })
        .collect();
    Mat::from_rows(&rows)
}

fn read_tests(path: &Path, n: usize) -> Result<Vec<KernelTestSample>> {
    let m = read_matrix(path)?;
    if m.cols() != n + 1 {
        return Err(Error::dims(format!(
            "tests file has {} columns, expected {} coefficients plus a label",
            m.cols(),
            n
        )));
    }
    (0..m.rows())
        .map(|i| {
            let row = m.row(i);
            let label = row[n];
            if label < 1.0 || label.fract() != 0.0 {
                return Err(Error::InvalidLabels(format!("test row {i}: label {label}")));
            }
            Ok(KernelTestSample {
                coefs: CoefVector::new(row[..n].to_vec()),
                label: label as usize,
            })
        })
        .collect()
}

fn cmd_src(x: &Path, labels: &Path, y: &Path, lambda: Option<f64>, eps: Option<f64>) -> Result<()> {
    let d = load_dictionary(x, Some(labels))?;
    let y = read_vector(y)?;
    let cfg = match (lambda, eps) {
        (Some(l), _) => SolverConfig::lasso(l),
        (None, Some(e)) => SolverConfig::bpdn(e),
        (None, None) => SolverConfig::default(),
    };
    let dec = src_classify(&d, &y, &cfg)?;
    println!("label={}", dec.label);
    for (l, r) in dec.residuals.iter().enumerate() {
        println!("residual_{}={}", l + 1, format_f64(*r));
    }
    println!("l0={}", dec.coef.l0());
    Ok(())
}

fn cmd_ksrc(
    x: &Path,
    labels: &Path,
    sigma: f64,
    lambda: f64,
    tests: &Path,
    normalize: bool,
) -> Result<()> {
    let d = load_dictionary(x, Some(labels))?;
    let model = gaussian_gram(&d, sigma)?;
    let tests = read_tests(tests, model.n())?;
    let cfg = KcdConfig {
        normalize_test: normalize,
        ..KcdConfig::default()
    };
    println!("mu_kernel={}", format_f64(model.mu_kernel()));
    println!("index,truth,label,l0,sweeps,converged");
    let mut correct = 0;
    for (i, t) in tests.iter().enumerate() {
        let r = ksrc_classify(&model, t, lambda, &cfg)?;
        correct += usize::from(r.decision.label == t.label);
        println!(
            "{i},{},{},{},{},{}",
            t.label,
            r.decision.label,
            r.decision.coef.l0(),
            r.sweeps,
            r.converged
        );
    }
    if !tests.is_empty() {
        println!(
            "accuracy={}",
            format_f64(correct as f64 / tests.len() as f64)
        );
    }
    Ok(())
}

fn cmd_exp(a: &ExpArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    if let Some(p) = &a.config {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        cfg.apply_config_text(&text)?;
    }
    cfg.set("study", &a.study)?;
    let flags = [
        ("db", &a.db),
        ("stages", &a.stages),
        ("trials", &a.trials),
        ("seed", &a.seed),
        ("zeta", &a.zeta),
        ("C", &a.c),
        ("k", &a.k),
        ("tau", &a.tau),
        ("eta", &a.eta),
        ("etas", &a.etas),
        ("sigma-grid", &a.sigma_grid),
    ];
    for (key, v) in flags {
        if let Some(v) = v {
            cfg.set(key, v)?;
        }
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    if a.raw {
        cfg.raw = true;
    }
    let out = experiments::run(&cfg)?;
    out.write_to(&a.out)?;
    for (name, t) in &out.files {
        println!("{} ({} rows)", a.out.join(name).display(), t.rows.len());
    }
    Ok(())
}
