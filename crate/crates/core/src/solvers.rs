//! ℓ1 solvers (homotopy lasso, basis pursuit, residual-constrained BPDN,
//! signal-error basis pursuit), the exhaustive ℓ0 oracle, and
//! thresholding-and-refit.

use crate::coherence::{Dictionary, ENUMERATION_CAP};
use crate::error::{Error, Result};
use crate::numerics::{
    axpy, binomial, least_squares, norm1, norm2, norm_inf, sub, KSubsets, Mat, PivotedQr,
};

/// Entries with magnitude at or below this are outside the support.
pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 1e-10;

/// The λ used to emulate equality-constrained basis pursuit.
pub const BP_LAMBDA: f64 = 1e-10;

/// Breakpoints closer than this are processed as one event.
const TIE_TOL: f64 = 1e-12;

/// Denominators below this in breakpoint formulas are ignored.
const DENOM_TOL: f64 = 1e-12;

/// Coefficient vector with the support cutoff it is reported against.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefVector {
    pub entries: Vec<f64>,
    pub threshold: f64,
}

impl CoefVector {
    pub fn new(entries: Vec<f64>) -> Self {
        Self {
            entries,
            threshold: DEFAULT_SUPPORT_THRESHOLD,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![0.0; n])
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Indices with `|entry| > threshold`.
    pub fn support(&self) -> Vec<usize> {
        support_at(&self.entries, self.threshold)
    }

    pub fn l0(&self) -> usize {
        self.l0_at(self.threshold)
    }

    pub fn l0_at(&self, tau: f64) -> usize {
        self.entries.iter().filter(|v| v.abs() > tau).count()
    }

    pub fn l1(&self) -> f64 {
        norm1(&self.entries)
    }

    pub fn l2(&self) -> f64 {
        norm2(&self.entries)
    }
}

pub fn support_at(v: &[f64], tau: f64) -> Vec<usize> {
    v.iter()
        .enumerate()
        .filter(|(_, x)| x.abs() > tau)
        .map(|(i, _)| i)
        .collect()
}

/// Which ℓ1 problem to solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Formulation {
    /// `min ‖α‖₁` s.t. `Xα = y`.
    BasisPursuit,
    /// `min ½‖y − Xα‖² + λ‖α‖₁`.
    Lasso { lambda: f64 },
    /// `min ‖α‖₁` s.t. `‖y − Xα‖₂ ≤ ε`.
    Bpdn { epsilon: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub formulation: Formulation,
    pub max_iters: usize,
    pub conv_tol: f64,
    pub support_threshold: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            formulation: Formulation::BasisPursuit,
            max_iters: 10_000,
            conv_tol: 1e-8,
            support_threshold: DEFAULT_SUPPORT_THRESHOLD,
        }
    }
}

impl SolverConfig {
    pub fn lasso(lambda: f64) -> Self {
        Self {
            formulation: Formulation::Lasso { lambda },
            ..Self::default()
        }
    }

    pub fn bpdn(epsilon: f64) -> Self {
        Self {
            formulation: Formulation::Bpdn { epsilon },
            ..Self::default()
        }
    }
}

/// Solver output with diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub coef: CoefVector,
    /// `‖y − Xα‖₂`.
    pub residual: f64,
    /// Homotopy events (or bisection steps for BPDN).
    pub iterations: usize,
    /// BPDN only: `ε ≥ ‖y‖` so zero was returned without solving.
    pub trivially_feasible: bool,
}

/// Dispatches on `cfg.formulation`.
pub fn solve(d: &Dictionary, y: &[f64], cfg: &SolverConfig) -> Result<Solution> {
    match cfg.formulation {
        Formulation::BasisPursuit => basis_pursuit_with(d, y, cfg),
        Formulation::Lasso { lambda } => lasso_homotopy_with(d, y, lambda, cfg),
        Formulation::Bpdn { epsilon } => bpdn_constrained_with(d, y, epsilon, cfg),
    }
}

/// One linear piece of the lasso path: on `[lambda_end, lambda_start]` the
/// active coefficients are `u − λ d` and the residual is `r0 + λ w`.
#[derive(Clone, Debug)]
pub struct PathSegment {
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub active: Vec<usize>,
    pub signs: Vec<f64>,
    u: Vec<f64>,
    d: Vec<f64>,
    r0: Vec<f64>,
    w: Vec<f64>,
}

impl PathSegment {
    fn coef_at(&self, n: usize, lambda: f64) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (k, &j) in self.active.iter().enumerate() {
            out[j] = self.u[k] - lambda * self.d[k];
        }
        out
    }

    fn residual_at(&self, lambda: f64) -> f64 {
        let mut r = self.r0.clone();
        axpy(lambda, &self.w, &mut r);
        norm2(&r)
    }
}

/// Piecewise-linear lasso regularization path from `‖Xᵀy‖∞` down to a floor.
#[derive(Clone, Debug)]
pub struct LassoPath {
    n: usize,
    y_norm: f64,
    lambda_max: f64,
    segments: Vec<PathSegment>,
    events: usize,
}

struct Candidate {
    lambda: f64,
    removal: bool,
    index: usize,
    sign: f64,
}

impl LassoPath {
    /// Follows the path down to `lambda_min`, or until the residual at a
    /// breakpoint drops to `stop_residual`.
    pub fn compute(
        x: &Mat,
        y: &[f64],
        lambda_min: f64,
        stop_residual: Option<f64>,
        max_iters: usize,
    ) -> Result<Self> {
        let (m, n) = (x.rows(), x.cols());
        if y.len() != m {
            return Err(Error::dims(format!(
                "dictionary has {m} rows, vector has {} entries",
                y.len()
            )));
        }
        if !(lambda_min > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {lambda_min}"
            )));
        }
        let corr = x.tr_matvec(y);
        let lambda_max = norm_inf(&corr);
        let mut path = LassoPath {
            n,
            y_norm: norm2(y),
            lambda_max,
            segments: Vec::new(),
            events: 0,
        };
        if lambda_max <= lambda_min {
            return Ok(path);
        }

        let mut active: Vec<usize> = Vec::new();
        let mut signs: Vec<f64> = Vec::new();
        for (j, &c) in corr.iter().enumerate() {
            if c.abs() >= lambda_max - TIE_TOL {
                try_activate(x, &mut active, &mut signs, j, c.signum());
            }
        }
        let mut lambda = lambda_max;
        let mut just_added: Vec<usize> = active.clone();
        let mut just_removed: Vec<usize> = Vec::new();

        loop {
            if path.events >= max_iters {
                return Err(Error::PathStall { iters: path.events });
            }
            let xa = x.select_columns(&active);
            let qr = PivotedQr::factor(&xa);
            let u = qr.solve_least_squares(y);
            let d = qr
                .solve_normal(&signs)
                .ok_or(Error::PathStall { iters: path.events })?;
            let r0 = sub(y, &xa.matvec(&u));
            let w = xa.matvec(&d);
            let c0 = x.tr_matvec(&r0);
            let a = x.tr_matvec(&w);

            let mut cands: Vec<Candidate> = Vec::new();
            let mut in_active = vec![false; n];
            for &j in &active {
                in_active[j] = true;
            }
            for (k, &j) in active.iter().enumerate() {
                if just_added.contains(&j) || d[k].abs() < DENOM_TOL {
                    continue;
                }
                let l = u[k] / d[k];
                if l > 0.0 && l < lambda {
                    cands.push(Candidate {
                        lambda: l,
                        removal: true,
                        index: j,
                        sign: 0.0,
                    });
                }
            }
            for j in 0..n {
                if in_active[j] || just_removed.contains(&j) {
                    continue;
                }
                for (sign, denom) in [(1.0, 1.0 - a[j]), (-1.0, 1.0 + a[j])] {
                    if denom.abs() < DENOM_TOL {
                        continue;
                    }
                    let l = sign * c0[j] / denom;
                    if l > 0.0 && l < lambda {
                        cands.push(Candidate {
                            lambda: l,
                            removal: false,
                            index: j,
                            sign,
                        });
                    }
                }
            }

            let next = cands.iter().map(|c| c.lambda).fold(0.0f64, f64::max);
            let floor = next.max(lambda_min);
            let seg = PathSegment {
                lambda_start: lambda,
                lambda_end: floor,
                active: active.clone(),
                signs: signs.clone(),
                u,
                d,
                r0,
                w,
            };
            let end_residual = seg.residual_at(floor);
            path.segments.push(seg);
            if next <= lambda_min || stop_residual.is_some_and(|s| end_residual <= s) {
                break;
            }

            // removals first, then activations, each by ascending index
            let mut tied: Vec<&Candidate> = cands
                .iter()
                .filter(|c| c.lambda >= next - TIE_TOL)
                .collect();
            tied.sort_by_key(|c| (!c.removal, c.index));
            tied.dedup_by_key(|c| c.index);
            just_added.clear();
            just_removed.clear();
            for c in tied {
                if c.removal {
                    if let Some(pos) = active.iter().position(|&j| j == c.index) {
                        active.remove(pos);
                        signs.remove(pos);
                        just_removed.push(c.index);
                    }
                } else if try_activate(x, &mut active, &mut signs, c.index, c.sign) {
                    just_added.push(c.index);
                }
            }
            path.events += 1;
            lambda = next;
            if active.is_empty() {
                return Err(Error::PathStall { iters: path.events });
            }
        }
        Ok(path)
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// Number of activation/removal events processed.
    pub fn events(&self) -> usize {
        self.events
    }

    pub fn segments(&self) -> &[PathSegment] {
        &self.segments
    }

    /// Smallest λ the path was followed to.
    pub fn lambda_floor(&self) -> f64 {
        self.segments
            .last()
            .map_or(self.lambda_max, |s| s.lambda_end)
    }

    fn segment(&self, lambda: f64) -> Option<&PathSegment> {
        if lambda >= self.lambda_max {
            return None;
        }
        self.segments
            .iter()
            .find(|s| lambda >= s.lambda_end)
            .or(self.segments.last())
    }

    /// Solution at `lambda`; below the floor the last segment is extended.
    pub fn coef_at(&self, lambda: f64) -> Vec<f64> {
        self.segment(lambda)
            .map_or_else(|| vec![0.0; self.n], |s| s.coef_at(self.n, lambda))
    }

    pub fn residual_at(&self, lambda: f64) -> f64 {
        self.segment(lambda)
            .map_or(self.y_norm, |s| s.residual_at(lambda))
    }
}

/// Appends `j` to the active set unless that makes it rank deficient.
fn try_activate(
    x: &Mat,
    active: &mut Vec<usize>,
    signs: &mut Vec<f64>,
    j: usize,
    sign: f64,
) -> bool {
    let mut trial = active.clone();
    trial.push(j);
    if PivotedQr::factor(&x.select_columns(&trial)).rank() < trial.len() {
        return false;
    }
    active.push(j);
    signs.push(sign);
    true
}

/// `max_j |X_jᵀ(y − Xα)|`.
pub fn max_correlation(x: &Mat, y: &[f64], alpha: &[f64]) -> f64 {
    norm_inf(&x.tr_matvec(&sub(y, &x.matvec(alpha))))
}

fn residual_norm(x: &Mat, y: &[f64], alpha: &[f64]) -> f64 {
    norm2(&sub(y, &x.matvec(alpha)))
}

fn check_kkt(x: &Mat, y: &[f64], alpha: &[f64], lambda: f64, tol: f64) -> Result<()> {
    let max_corr = max_correlation(x, y, alpha);
    if max_corr > lambda + tol {
        return Err(Error::KktViolation { max_corr, lambda });
    }
    Ok(())
}

pub(crate) fn lasso_on_matrix(
    x: &Mat,
    y: &[f64],
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<Solution> {
    let path = LassoPath::compute(x, y, lambda, None, cfg.max_iters)?;
    let alpha = path.coef_at(lambda);
    check_kkt(x, y, &alpha, lambda, cfg.conv_tol)?;
    Ok(Solution {
        residual: residual_norm(x, y, &alpha),
        coef: CoefVector::new(alpha).with_threshold(cfg.support_threshold),
        iterations: path.events(),
        trivially_feasible: false,
    })
}

/// `argmin ½‖y − Xα‖² + λ‖α‖₁` by following the homotopy path.
pub fn lasso_homotopy(d: &Dictionary, y: &[f64], lambda: f64) -> Result<CoefVector> {
    Ok(lasso_homotopy_with(d, y, lambda, &SolverConfig::lasso(lambda))?.coef)
}

pub fn lasso_homotopy_with(
    d: &Dictionary,
    y: &[f64],
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<Solution> {
    lasso_on_matrix(d.matrix(), y, lambda, cfg)
}

/// `min ‖α‖₁` s.t. `Xα = y`, as the lasso at `λ = 1e-10` after checking that
/// `y` lies in the column span.
pub fn basis_pursuit(d: &Dictionary, y: &[f64]) -> Result<CoefVector> {
    Ok(basis_pursuit_with(d, y, &SolverConfig::default())?.coef)
}

pub fn basis_pursuit_with(d: &Dictionary, y: &[f64], cfg: &SolverConfig) -> Result<Solution> {
    let x = d.matrix();
    let y_norm = norm2(y);
    if y.len() != x.rows() {
        return Err(Error::dims(format!(
            "dictionary has {} rows, vector has {} entries",
            x.rows(),
            y.len()
        )));
    }
    if y_norm == 0.0 {
        return Ok(Solution {
            coef: CoefVector::zeros(x.cols()).with_threshold(cfg.support_threshold),
            residual: 0.0,
            iterations: 0,
            trivially_feasible: false,
        });
    }
    let ls = least_squares(x, y)?;
    let rel = residual_norm(x, y, &ls) / y_norm;
    if rel > 1e-8 {
        return Err(Error::Infeasible(rel));
    }
    let sol = lasso_on_matrix(x, y, BP_LAMBDA, cfg)?;
    if sol.residual > 1e-6 * y_norm {
        return Err(Error::Infeasible(sol.residual / y_norm));
    }
    Ok(sol)
}

/// `min ‖α‖₁` s.t. `‖y − Xα‖₂ ≤ ε`: bisection in log-λ along the lasso path
/// for the point where the residual equals `ε`.
pub fn bpdn_constrained(d: &Dictionary, y: &[f64], epsilon: f64) -> Result<Solution> {
    bpdn_constrained_with(d, y, epsilon, &SolverConfig::bpdn(epsilon))
}

pub fn bpdn_constrained_with(
    d: &Dictionary,
    y: &[f64],
    epsilon: f64,
    cfg: &SolverConfig,
) -> Result<Solution> {
    let x = d.matrix();
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let y_norm = norm2(y);
    if epsilon >= y_norm {
        return Ok(Solution {
            coef: CoefVector::zeros(x.cols()).with_threshold(cfg.support_threshold),
            residual: y_norm,
            iterations: 0,
            trivially_feasible: true,
        });
    }
    let path = LassoPath::compute(x, y, BP_LAMBDA, Some(epsilon), cfg.max_iters)?;
    let mut lo = path.lambda_floor();
    if path.residual_at(lo) > epsilon {
        return Err(Error::Infeasible(path.residual_at(lo) / y_norm));
    }
    let mut hi = path.lambda_max();
    let mut lambda = lo;
    let mut iterations = 0;
    for _ in 0..60 {
        iterations += 1;
        lambda = (lo.ln() + 0.5 * (hi.ln() - lo.ln())).exp();
        let r = path.residual_at(lambda);
        if (r - epsilon).abs() <= cfg.conv_tol {
            break;
        }
        if r > epsilon {
            hi = lambda;
        } else {
            lo = lambda;
        }
        lambda = lo;
    }
    let alpha = path.coef_at(lambda);
    Ok(Solution {
        residual: residual_norm(x, y, &alpha),
        coef: CoefVector::new(alpha).with_threshold(cfg.support_threshold),
        iterations,
        trivially_feasible: false,
    })
}

/// `min ‖α‖₁ + ‖z‖₁` s.t. `y = Xα + z`, solved as basis pursuit over
/// `[X | I]` and split back into `(α, z)`.
pub fn signal_error_bp(d: &Dictionary, y: &[f64]) -> Result<(CoefVector, Vec<f64>)> {
    let aug = d.hcat(&Dictionary::new(Mat::identity(d.m()), None)?)?;
    let full = basis_pursuit(&aug, y)?.entries;
    let (alpha, z) = full.split_at(d.n());
    Ok((CoefVector::new(alpha.to_vec()), z.to_vec()))
}

/// Sparsest representation by exhaustive search over supports of size
/// `1..=k_cap`; the first (lexicographically smallest) support whose
/// least-squares fit reaches `res_tol·‖y‖₂` wins.
pub fn l0_oracle(d: &Dictionary, y: &[f64], k_cap: usize, res_tol: f64) -> Result<CoefVector> {
    let n = d.n();
    let count = binomial(n, k_cap);
    if count > ENUMERATION_CAP {
        return Err(Error::CombinatorialBlowup {
            n,
            k: k_cap,
            count,
            cap: ENUMERATION_CAP,
        });
    }
    if y.len() != d.m() {
        return Err(Error::dims(format!(
            "dictionary has {} rows, vector has {} entries",
            d.m(),
            y.len()
        )));
    }
    let tol = res_tol * norm2(y);
    if norm2(y) == 0.0 {
        return Ok(CoefVector::zeros(n));
    }
    let x = d.matrix();
    for k in 1..=k_cap.min(n) {
        for support in KSubsets::new(n, k) {
            let sub_m = x.select_columns(&support);
            let beta = PivotedQr::factor(&sub_m).solve_least_squares(y);
            if norm2(&sub(&sub_m.matvec(&beta), y)) <= tol {
                let mut out = vec![0.0; n];
                for (&j, &b) in support.iter().zip(&beta) {
                    out[j] = b;
                }
                return Ok(CoefVector::new(out));
            }
        }
    }
    Err(Error::NoSolution { k_cap })
}

/// Default relative residual tolerance for [`l0_oracle`].
pub const L0_RES_TOL: f64 = 1e-8;

/// Zeroes entries below `tau` in magnitude and refits the survivors by least
/// squares.
pub fn threshold_and_refit(
    d: &Dictionary,
    y: &[f64],
    alpha: &CoefVector,
    tau: f64,
) -> Result<CoefVector> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must be positive, got {tau}"
        )));
    }
    let support: Vec<usize> = alpha
        .entries
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() >= tau)
        .map(|(i, _)| i)
        .collect();
    if support.is_empty() {
        return Err(Error::EmptySupport(tau));
    }
    let beta = least_squares(&d.matrix().select_columns(&support), y)?;
    let mut out = vec![0.0; d.n()];
    for (&j, &b) in support.iter().zip(&beta) {
        out[j] = b;
    }
    Ok(CoefVector::new(out).with_threshold(alpha.threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::normalize_columns;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_dict(m: usize, n: usize, seed: u64) -> Dictionary {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..m * n).map(|_| rng.sample(StandardNormal)).collect();
        let raw = Mat::new(m, n, data).unwrap();
        Dictionary::new(normalize_columns(&raw).unwrap(), None).unwrap()
    }

    fn planted(n: usize, support: &[usize], seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = vec![0.0; n];
        for &j in support {
            a[j] = rng.random_range(0.2..1.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        a
    }

    /// Rotated orthonormal basis.
    fn orthonormal(n: usize, seed: u64) -> Dictionary {
        let d = random_dict(n, n, seed);
        let qr_cols = gram_schmidt(d.matrix());
        Dictionary::new(qr_cols, None).unwrap()
    }

    fn gram_schmidt(m: &Mat) -> Mat {
        let mut out = m.clone();
        for j in 0..m.cols() {
            for k in 0..j {
                let p = crate::numerics::dot(out.col(k), out.col(j));
                let qk = out.col(k).to_vec();
                axpy(-p, &qk, out.col_mut(j));
            }
            let nrm = norm2(out.col(j));
            out.col_mut(j).iter_mut().for_each(|v| *v /= nrm);
        }
        out
    }

    #[test]
    fn orthonormal_lasso_is_soft_threshold() {
        for seed in 0..10 {
            let d = orthonormal(8, seed);
            let y: Vec<f64> = planted(8, &[0, 1, 2, 3, 4, 5, 6, 7], seed + 100);
            for lambda in [0.05, 0.3, 0.7] {
                let got = lasso_homotopy(&d, &y, lambda).unwrap();
                let expected = crate::numerics::soft_threshold(&d.matrix().tr_matvec(&y), lambda);
                for (a, b) in got.entries.iter().zip(&expected) {
                    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn lambda_above_max_gives_zero() {
        let d = random_dict(10, 20, 3);
        let y = d.matrix().matvec(&planted(20, &[1, 4], 4));
        let lmax = norm_inf(&d.matrix().tr_matvec(&y));
        let a = lasso_homotopy(&d, &y, lmax).unwrap();
        assert!(a.entries.iter().all(|v| *v == 0.0));
        let a = lasso_homotopy(&d, &y, 2.0 * lmax).unwrap();
        assert_eq!(a.l0(), 0);
    }

    #[test]
    fn homotopy_matches_l0_oracle_on_planted_sparse() {
        let mut hits = 0;
        for seed in 0..20 {
            let d = random_dict(20, 40, seed);
            let alpha0 = planted(40, &[3, 17, 30], seed + 1000);
            let y = d.matrix().matvec(&alpha0);
            let oracle = l0_oracle(&d, &y, 3, L0_RES_TOL).unwrap();
            assert_eq!(oracle.support(), vec![3, 17, 30]);
            let a = lasso_homotopy(&d, &y, 1e-10).unwrap();
            let err = norm_inf(&sub(&a.entries, &alpha0));
            if err < 1e-6 {
                hits += 1;
            }
        }
        // random 20x40 Gaussian dictionaries recover 3-sparse vectors reliably
        assert!(hits >= 19, "{hits}/20");
    }

    #[test]
    fn basis_pursuit_single_atom_and_infeasible() {
        let d = random_dict(6, 12, 9);
        let y: Vec<f64> = d.matrix().col(5).iter().map(|v| 2.0 * v).collect();
        let a = basis_pursuit(&d, &y).unwrap();
        assert_eq!(a.support(), vec![5]);
        assert!((a.entries[5] - 2.0).abs() < 1e-8);

        // two atoms in R^3 cannot span e3
        let x = Mat::from_columns(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let d = Dictionary::new(x, None).unwrap();
        assert!(matches!(
            basis_pursuit(&d, &[0.0, 0.0, 1.0]),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn bpdn_trivial_and_bp_limit() {
        let d = random_dict(10, 25, 11);
        let alpha0 = planted(25, &[2, 9], 12);
        let y = d.matrix().matvec(&alpha0);
        let s = bpdn_constrained(&d, &y, 2.0 * norm2(&y)).unwrap();
        assert!(s.trivially_feasible && s.coef.l0() == 0);

        let bp = basis_pursuit(&d, &y).unwrap();
        let small = bpdn_constrained(&d, &y, 1e-9).unwrap();
        assert!(norm_inf(&sub(&bp.entries, &small.coef.entries)) < 1e-5);

        let eps = 0.3 * norm2(&y);
        let s = bpdn_constrained(&d, &y, eps).unwrap();
        assert!((s.residual - eps).abs() <= 1e-8);
    }

    #[test]
    fn signal_error_splits_exact_column_and_zero() {
        let d = random_dict(8, 16, 21);
        let y = d.matrix().col(3).to_vec();
        let (a, z) = signal_error_bp(&d, &y).unwrap();
        assert_eq!(a.support(), vec![3]);
        assert!((a.entries[3] - 1.0).abs() < 1e-8);
        assert!(norm_inf(&z) < 1e-8);
        let (a, z) = signal_error_bp(&d, &[0.0; 8]).unwrap();
        assert_eq!(a.l0(), 0);
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn oracle_basic_cases() {
        let d = random_dict(10, 20, 31);
        let y = d.matrix().col(7).to_vec();
        assert_eq!(l0_oracle(&d, &y, 2, L0_RES_TOL).unwrap().support(), vec![7]);
        let e = Dictionary::new(Mat::identity(4), None).unwrap();
        let a = l0_oracle(&e, &[1.0, 1.0, 0.0, 0.0], 2, L0_RES_TOL).unwrap();
        assert_eq!(a.support(), vec![0, 1]);
        assert!(matches!(
            l0_oracle(&e, &[1.0, 1.0, 1.0, 0.0], 2, L0_RES_TOL),
            Err(Error::NoSolution { k_cap: 2 })
        ));
        let big = random_dict(10, 200, 1);
        assert!(matches!(
            l0_oracle(&big, &[0.0; 10], 4, L0_RES_TOL),
            Err(Error::CombinatorialBlowup { .. })
        ));
    }

    #[test]
    fn refit_keeps_exact_sparse_and_rejects_empty() {
        let d = random_dict(12, 20, 41);
        let alpha0 = planted(20, &[0, 5, 11], 42);
        let y = d.matrix().matvec(&alpha0);
        let refit = threshold_and_refit(&d, &y, &CoefVector::new(alpha0.clone()), 1e-3).unwrap();
        assert!(norm_inf(&sub(&refit.entries, &alpha0)) < 1e-12);
        assert!(matches!(
            threshold_and_refit(&d, &y, &CoefVector::new(vec![1e-9; 20]), 1e-5),
            Err(Error::EmptySupport(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn lasso_satisfies_subgradient_conditions(seed in 0u64..10_000, frac in 0.01f64..0.9) {
            let d = random_dict(12, 30, seed);
            let y = d.matrix().matvec(&planted(30, &[1, 8, 20, 25], seed ^ 77));
            let lambda = frac * norm_inf(&d.matrix().tr_matvec(&y));
            let a = lasso_homotopy(&d, &y, lambda).unwrap();
            let c = d.matrix().tr_matvec(&sub(&y, &d.matrix().matvec(&a.entries)));
            for (j, &cj) in c.iter().enumerate() {
                prop_assert!(cj.abs() <= lambda + 1e-8);
                if a.entries[j] != 0.0 {
                    prop_assert!((cj - lambda * a.entries[j].signum()).abs() <= 1e-8);
                }
            }
        }

        #[test]
        fn pareto_monotone(seed in 0u64..10_000, f1 in 0.01f64..0.9, f2 in 0.01f64..0.9) {
            let d = random_dict(10, 24, seed);
            let y = d.matrix().matvec(&planted(24, &[0, 6, 13], seed ^ 5));
            let lmax = norm_inf(&d.matrix().tr_matvec(&y));
            let (l1, l2) = (f1.min(f2) * lmax, f1.max(f2) * lmax);
            let a1 = lasso_homotopy(&d, &y, l1).unwrap();
            let a2 = lasso_homotopy(&d, &y, l2).unwrap();
            let r1 = norm2(&sub(&y, &d.matrix().matvec(&a1.entries)));
            let r2 = norm2(&sub(&y, &d.matrix().matvec(&a2.entries)));
            prop_assert!(r1 <= r2 + 1e-8);
            prop_assert!(a1.l1() >= a2.l1() - 1e-8);
        }

        #[test]
        fn sign_flip_equivariance(seed in 0u64..10_000, j in 0usize..24) {
            let d = random_dict(10, 24, seed);
            let y = d.matrix().matvec(&planted(24, &[2, 9, 17], seed ^ 9));
            let flipped = d.with_negated_column(j);
            let a = basis_pursuit(&d, &y).unwrap();
            let b = basis_pursuit(&flipped, &y).unwrap();
            for k in 0..24 {
                let expect = if k == j { -a.entries[k] } else { a.entries[k] };
                prop_assert!((b.entries[k] - expect).abs() <= 1e-10);
            }
        }
    }
}
