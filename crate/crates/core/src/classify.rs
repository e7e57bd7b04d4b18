//! Sparse-representation classification in the original space and in a
//! Gaussian-kernel feature space.

use crate::coherence::Dictionary;
use crate::error::{Error, Result};
use crate::numerics::{cholesky, cholesky_solve, dot, norm2, soft_threshold_scalar, sub, Mat};
use crate::solvers::{solve, CoefVector, SolverConfig, DEFAULT_SUPPORT_THRESHOLD};

/// Largest σ for which a unit-column dictionary can have kernel coherence
/// below 1/3: `2/√(ln 3)`, since no two unit vectors are more than 2 apart.
pub fn sigma_cap() -> f64 {
    sigma_cap_for_distance(2.0)
}

/// `d_max/√(ln 3)` for data whose pairwise distances are at most `d_max`
/// (`√2` for nonnegative unit vectors).
pub fn sigma_cap_for_distance(d_max: f64) -> f64 {
    d_max / 3f64.ln().sqrt()
}

/// `(σ < cap, cap)`.
pub fn kernel_coherence_bound(sigma: f64) -> (bool, f64) {
    let cap = sigma_cap();
    (sigma < cap, cap)
}

/// Outcome of a classification: the label with the smallest class residual.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassDecision {
    pub label: usize,
    /// `residuals[l-1]` for class `l`.
    pub residuals: Vec<f64>,
    pub coef: CoefVector,
}

/// Index (1-based) of the smallest residual; ties go to the lowest class.
fn argmin_label(residuals: &[f64]) -> usize {
    let mut best = 0;
    for (i, &r) in residuals.iter().enumerate() {
        if r < residuals[best] {
            best = i;
        }
    }
    best + 1
}

/// `δ_l(α)`: keeps only the entries of class `class`.
pub fn class_restrict(alpha: &[f64], labels: &[usize], class: usize) -> Vec<f64> {
    alpha
        .iter()
        .zip(labels)
        .map(|(&a, &l)| if l == class { a } else { 0.0 })
        .collect()
}

/// Solves for a sparse code of `y` and assigns the class whose columns
/// reconstruct `y` best.
pub fn src_classify(d: &Dictionary, y: &[f64], cfg: &SolverConfig) -> Result<ClassDecision> {
    let labels = d.labels().ok_or(Error::Unlabeled)?;
    let coef = solve(d, y, cfg)?.coef;
    let residuals: Vec<f64> = (1..=d.num_classes())
        .map(|l| {
            let part = class_restrict(&coef.entries, labels, l);
            norm2(&sub(y, &d.matrix().matvec(&part)))
        })
        .collect();
    Ok(ClassDecision {
        label: argmin_label(&residuals),
        residuals,
        coef,
    })
}

/// Gaussian-kernel Gram matrix over a labeled dictionary.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelModel {
    sigma: f64,
    gram: Mat,
    labels: Vec<usize>,
}

/// `K_ij = exp(−‖x_i − x_j‖²/σ²)`.
pub fn gaussian_gram(d: &Dictionary, sigma: f64) -> Result<KernelModel> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let labels = d.labels().ok_or(Error::Unlabeled)?.to_vec();
    let x = d.matrix();
    let n = x.cols();
    let s2 = sigma * sigma;
    let mut gram = Mat::identity(n);
    for j in 0..n {
        for i in 0..j {
            let dist2: f64 = x
                .col(i)
                .iter()
                .zip(x.col(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let v = (-dist2 / s2).exp();
            gram.set(i, j, v);
            gram.set(j, i, v);
        }
    }
    Ok(KernelModel {
        sigma,
        gram,
        labels,
    })
}

impl KernelModel {
    /// Builds a model from a precomputed Gram matrix.
    pub fn from_gram(sigma: f64, gram: Mat, labels: Vec<usize>) -> Result<Self> {
        if gram.rows() != gram.cols() || gram.cols() != labels.len() {
            return Err(Error::dims("gram must be square with one label per column"));
        }
        Ok(Self {
            sigma,
            gram,
            labels,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn gram(&self) -> &Mat {
        &self.gram
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Mutual coherence in feature space: the largest off-diagonal entry.
    pub fn mu_kernel(&self) -> f64 {
        let n = self.n();
        let mut mu = 0.0f64;
        for j in 0..n {
            for i in 0..j {
                mu = mu.max(self.gram.get(i, j));
            }
        }
        mu
    }

    /// `½(1 + 1/μ_kernel)`.
    pub fn k_sup(&self) -> f64 {
        let mu = self.mu_kernel();
        if mu == 0.0 {
            f64::INFINITY
        } else {
            0.5 * (1.0 + 1.0 / mu)
        }
    }

    /// Inner products `⟨φ(x_j), φ(y)⟩ = (Kc)_j` for an implicit sample `φ(y) = Φc`.
    pub fn kernel_vector(&self, c: &[f64]) -> Vec<f64> {
        self.gram.matvec(c)
    }

    /// Columns of the Cholesky factor `R` with `K = RᵀR`: an explicit
    /// dictionary with the same Gram matrix (unit columns since `K_jj = 1`).
    pub fn feature_dictionary(&self) -> Result<Dictionary> {
        let l = cholesky(&self.gram).ok_or_else(|| {
            Error::InvalidParameter(
                "kernel Gram matrix is not numerically positive definite".into(),
            )
        })?;
        // R = Lᵀ, and Dictionary::from_raw absorbs the rounding in the norms
        Dictionary::from_raw(&l.transpose(), Some(self.labels.clone()))
    }
}

/// Implicit kernel-space test sample `φ(y) = Φc` with its true class.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelTestSample {
    pub coefs: CoefVector,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KcdConfig {
    /// Stop when no coordinate moves by more than this in a sweep.
    pub conv_tol: f64,
    pub max_sweeps: usize,
    /// Entries at or below this are zeroed on return.
    pub threshold: f64,
    /// Periodically jump to the stationary point of the current active set
    /// (accepted only if it satisfies the optimality conditions); the sweeps
    /// then confirm convergence.
    pub polish: bool,
    /// Divide `c` by `√(cᵀKc)` before classifying.
    pub normalize_test: bool,
}

impl Default for KcdConfig {
    fn default() -> Self {
        Self {
            conv_tol: 1e-12,
            max_sweeps: 100_000,
            threshold: DEFAULT_SUPPORT_THRESHOLD,
            polish: true,
            normalize_test: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KcdResult {
    pub coef: CoefVector,
    pub sweeps: usize,
    pub converged: bool,
}

const POLISH_FIRST: usize = 3;
const POLISH_EVERY: usize = 25;

/// `min ½(cᵀKc − 2αᵀKc + αᵀKα) + λ‖α‖₁` by cyclic coordinate descent in
/// ascending index order. `kc` is `Kc`.
pub fn kcd_lasso(k: &Mat, kc: &[f64], lambda: f64, cfg: &KcdConfig) -> Result<KcdResult> {
    let n = k.cols();
    if k.rows() != n || kc.len() != n {
        return Err(Error::dims("kernel matrix must be square and match Kc"));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let mut alpha = vec![0.0; n];
    // g = Kα
    let mut g = vec![0.0; n];
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for j in 0..n {
            let kjj = k.get(j, j);
            let z = kc[j] - (g[j] - kjj * alpha[j]);
            let new = soft_threshold_scalar(z, lambda) / kjj;
            let delta = new - alpha[j];
            if delta != 0.0 {
                alpha[j] = new;
                for (gi, kij) in g.iter_mut().zip(k.col(j)) {
                    *gi += delta * kij;
                }
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change <= cfg.conv_tol {
            converged = true;
            break;
        }
        if cfg.polish && (sweeps == POLISH_FIRST || sweeps % POLISH_EVERY == 0) {
            if let Some(p) = active_set_point(k, kc, lambda, &alpha) {
                alpha = p;
                g = k.matvec(&alpha);
            }
        }
    }
    for a in alpha.iter_mut() {
        if a.abs() <= cfg.threshold {
            *a = 0.0;
        }
    }
    Ok(KcdResult {
        coef: CoefVector::new(alpha).with_threshold(cfg.threshold),
        sweeps,
        converged,
    })
}

/// Primal active-set refinement started from the current iterate's support:
/// solve `K_SS α_S = (Kc)_S − λ s_S`, drop indices whose sign flips, add the
/// worst violator of `|(Kc − Kα)_j| ≤ λ`, and repeat. Returns a point only if
/// it satisfies the optimality conditions exactly (up to rounding).
fn active_set_point(k: &Mat, kc: &[f64], lambda: f64, alpha: &[f64]) -> Option<Vec<f64>> {
    let n = alpha.len();
    let mut support: Vec<usize> = (0..n).filter(|&j| alpha[j] != 0.0).collect();
    let mut signs: Vec<f64> = support.iter().map(|&j| alpha[j].signum()).collect();
    for _ in 0..2 * n {
        if support.is_empty() {
            return None;
        }
        let s = support.len();
        let mut kss = Mat::zeros(s, s);
        for (b, &j) in support.iter().enumerate() {
            for (a, &i) in support.iter().enumerate() {
                kss.set(a, b, k.get(i, j));
            }
        }
        let rhs: Vec<f64> = support
            .iter()
            .zip(&signs)
            .map(|(&j, &sg)| kc[j] - lambda * sg)
            .collect();
        let sol = cholesky_solve(&kss, &rhs)?;
        if sol.iter().zip(&signs).any(|(v, sg)| v * sg <= 0.0) {
            let keep: Vec<bool> = sol.iter().zip(&signs).map(|(v, sg)| v * sg > 0.0).collect();
            let mut i = 0;
            support.retain(|_| {
                i += 1;
                keep[i - 1]
            });
            let mut i = 0;
            signs.retain(|_| {
                i += 1;
                keep[i - 1]
            });
            continue;
        }
        let mut out = vec![0.0; n];
        for (&j, &v) in support.iter().zip(&sol) {
            out[j] = v;
        }
        let g = k.matvec(&out);
        let worst = (0..n)
            .filter(|&j| out[j] == 0.0)
            .map(|j| (j, kc[j] - g[j]))
            .filter(|(_, r)| r.abs() > lambda * (1.0 + 1e-9))
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()));
        match worst {
            None => return Some(out),
            Some((j, r)) => {
                support.push(j);
                signs.push(r.signum());
            }
        }
    }
    None
}

/// Kernel classification result with solver diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelDecision {
    pub decision: ClassDecision,
    pub sweeps: usize,
    pub converged: bool,
}

/// Kernelized class residuals
/// `√(cᵀKc − 2δ_l(α)ᵀKc + δ_l(α)ᵀKδ_l(α))`, clamped at zero under the root.
pub fn kernel_residuals(model: &KernelModel, c: &[f64], alpha: &[f64]) -> Vec<f64> {
    let kc = model.kernel_vector(c);
    let ckc = dot(c, &kc);
    (1..=model.num_classes())
        .map(|l| {
            let part = class_restrict(alpha, &model.labels, l);
            let kpart = model.gram.matvec(&part);
            (ckc - 2.0 * dot(&part, &kc) + dot(&part, &kpart))
                .max(0.0)
                .sqrt()
        })
        .collect()
}

pub fn ksrc_classify(
    model: &KernelModel,
    t: &KernelTestSample,
    lambda: f64,
    cfg: &KcdConfig,
) -> Result<KernelDecision> {
    let mut c = t.coefs.entries.clone();
    if c.len() != model.n() {
        return Err(Error::dims(format!(
            "test coefficients have {} entries, model has {} columns",
            c.len(),
            model.n()
        )));
    }
    if cfg.normalize_test {
        let norm = dot(&c, &model.kernel_vector(&c)).max(0.0).sqrt();
        if norm > 0.0 {
            c.iter_mut().for_each(|v| *v /= norm);
        }
    }
    let kc = model.kernel_vector(&c);
    let res = kcd_lasso(&model.gram, &kc, lambda, cfg)?;
    let residuals = kernel_residuals(model, &c, &res.coef.entries);
    Ok(KernelDecision {
        decision: ClassDecision {
            label: argmin_label(&residuals),
            residuals,
            coef: res.coef,
        },
        sweeps: res.sweeps,
        converged: res.converged,
    })
}
