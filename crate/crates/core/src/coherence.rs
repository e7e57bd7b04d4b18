//! Mutual coherence, the recovery certificates built on it, and the
//! desk-scale checkers that show when those certificates cannot apply.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{
    binomial, dot_compensated, least_squares, norm2, normalize_columns, sub, KSubsets, Mat,
    PivotedQr,
};

/// Tolerance on column norms for a matrix to count as a dictionary.
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// Largest number of subsets the exhaustive scans will enumerate.
pub const ENUMERATION_CAP: u128 = 1_000_000;

/// Unit-column matrix with optional 1-based class labels per column.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    data: Mat,
    labels: Option<Vec<usize>>,
}

impl Dictionary {
    /// Wraps a matrix whose columns are already unit norm.
    pub fn new(data: Mat, labels: Option<Vec<usize>>) -> Result<Self> {
        for j in 0..data.cols() {
            let norm = dot_compensated(data.col(j), data.col(j)).sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::NotUnitColumns { column: j, norm });
            }
        }
        if let Some(l) = &labels {
            validate_labels(l, data.cols())?;
        }
        Ok(Self { data, labels })
    }

    /// Normalizes the columns first.
    pub fn from_raw(data: &Mat, labels: Option<Vec<usize>>) -> Result<Self> {
        Self::new(normalize_columns(data)?, labels)
    }

    pub fn matrix(&self) -> &Mat {
        &self.data
    }

    /// Ambient dimension `m`.
    pub fn m(&self) -> usize {
        self.data.rows()
    }

    /// Number of atoms `N`.
    pub fn n(&self) -> usize {
        self.data.cols()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .map_or(0, |l| l.iter().copied().max().unwrap_or(0))
    }

    /// Column indices belonging to class `class` (1-based).
    pub fn class_columns(&self, class: usize) -> Result<Vec<usize>> {
        let labels = self.labels.as_ref().ok_or(Error::Unlabeled)?;
        Ok(labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(j, _)| j)
            .collect())
    }

    /// `N_l` for `l = 1..=L`.
    pub fn class_sizes(&self) -> Result<Vec<usize>> {
        let labels = self.labels.as_ref().ok_or(Error::Unlabeled)?;
        let mut sizes = vec![0; self.num_classes()];
        for &l in labels {
            sizes[l - 1] += 1;
        }
        Ok(sizes)
    }

    /// Copy with column `j` negated.
    pub fn with_negated_column(&self, j: usize) -> Self {
        let mut data = self.data.clone();
        data.negate_column(j);
        Self {
            data,
            labels: self.labels.clone(),
        }
    }

    /// `[self | other]`; labels are kept only if both sides are labeled.
    pub fn hcat(&self, other: &Dictionary) -> Result<Self> {
        let data = self.data.hcat(&other.data)?;
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some([a.as_slice(), b.as_slice()].concat()),
            _ => None,
        };
        Ok(Self { data, labels })
    }
}

fn validate_labels(labels: &[usize], n: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::InvalidLabels(format!(
            "{} labels for {n} columns",
            labels.len()
        )));
    }
    if labels.contains(&0) {
        return Err(Error::InvalidLabels("labels are 1-based".into()));
    }
    let max = labels.iter().copied().max().unwrap_or(0);
    let mut seen = vec![false; max];
    for &l in labels {
        seen[l - 1] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidLabels(format!(
            "class {} is empty",
            missing + 1
        )));
    }
    Ok(())
}

/// `max_{i≠j} |⟨x_i, x_j⟩|`.
pub fn mutual_coherence(d: &Dictionary) -> Result<f64> {
    coherence_of(d.matrix())
}

/// Mutual coherence of an arbitrary matrix, treating columns as given.
pub fn coherence_of(m: &Mat) -> Result<f64> {
    let n = m.cols();
    if n < 2 {
        return Err(Error::TooFewColumns(n));
    }
    // max is associative and commutative, so the split across workers does
    // not change the result
    let mu = (1..n)
        .into_par_iter()
        .map(|j| {
            let cj = m.col(j);
            (0..j)
                .map(|i| dot_compensated(m.col(i), cj).abs())
                .fold(0.0f64, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(mu)
}

/// `√((N−m)/(m(N−1)))`, the smallest coherence any unit-column `m × N`
/// matrix can have.
pub fn welch_bound(m: usize, n: usize) -> Result<f64> {
    if m == 0 || n <= m {
        return Err(Error::NotUnderdetermined { m, n });
    }
    let (m, n) = (m as f64, n as f64);
    Ok(((n - m) / (m * (n - 1.0))).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryCertificate {
    pub mu: f64,
    /// `None` when the dictionary is not underdetermined.
    pub welch_bound: Option<f64>,
    /// `½(1 + 1/μ)`; infinite when `μ = 0`.
    pub k_max_noiseless: f64,
    /// `¼(1 + 1/μ)`; infinite when `μ = 0`.
    pub k_max_noisy: f64,
}

impl RecoveryCertificate {
    pub fn from_mu(mu: f64, welch_bound: Option<f64>) -> Self {
        let inv = if mu == 0.0 { f64::INFINITY } else { 1.0 / mu };
        Self {
            mu,
            welch_bound,
            k_max_noiseless: 0.5 * (1.0 + inv),
            k_max_noisy: 0.25 * (1.0 + inv),
        }
    }

    /// A `k`-sparse representation is the unique sparsest one and is found by
    /// equality-constrained ℓ1 minimization.
    pub fn verdict_noiseless(&self, k: usize) -> bool {
        (k as f64) < self.k_max_noiseless
    }

    /// The noisy counterpart: stability of the error-constrained problem.
    pub fn verdict_noisy(&self, k: usize) -> bool {
        (k as f64) <= self.k_max_noisy
    }

    /// `μ − welch_bound`.
    pub fn slack(&self) -> Option<f64> {
        self.welch_bound.map(|w| self.mu - w)
    }
}

pub fn certificate(d: &Dictionary) -> Result<RecoveryCertificate> {
    let mu = mutual_coherence(d)?;
    let welch = welch_bound(d.m(), d.n()).ok();
    Ok(RecoveryCertificate::from_mu(mu, welch))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilityConstants {
    pub mu: f64,
    pub k: usize,
    /// `μk`.
    pub beta: f64,
    /// `√(1−β)/(1−2β)`, defined for `β < ½`.
    pub gamma: Option<f64>,
    /// `γ√k`.
    pub c: Option<f64>,
}

impl StabilityConstants {
    /// Upper bound on `‖α_{1,ε} − α₀‖²` for noise `ζ` and tolerance `ε`,
    /// defined when `μ(4k−1) < 1`.
    pub fn error_bound(&self, eps: f64, zeta: f64) -> Option<f64> {
        let denom = 1.0 - self.mu * (4.0 * self.k as f64 - 1.0);
        (denom > 0.0).then(|| (eps + zeta).powi(2) / denom)
    }
}

pub fn stability_constants(mu: f64, k: usize) -> Result<StabilityConstants> {
    if k == 0 || !(0.0..=1.0 + UNIT_NORM_TOL).contains(&mu) {
        return Err(Error::InvalidParameter(format!(
            "stability constants need k >= 1 and mu in [0,1], got k={k}, mu={mu}"
        )));
    }
    let beta = mu * k as f64;
    let gamma = (beta < 0.5).then(|| (1.0 - beta).sqrt() / (1.0 - 2.0 * beta));
    Ok(StabilityConstants {
        mu,
        k,
        beta,
        gamma,
        c: gamma.map(|g| g * (k as f64).sqrt()),
    })
}

/// Coherence of `[y, X]` and whether adding `y` raised it above `μ(X)`.
pub fn coherence_with_test(d: &Dictionary, y: &[f64]) -> Result<(f64, bool)> {
    if y.len() != d.m() {
        return Err(Error::dims(format!(
            "test vector has {} entries, dictionary has {} rows",
            y.len(),
            d.m()
        )));
    }
    let norm = dot_compensated(y, y).sqrt();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::NotNormalized(norm));
    }
    let mu = mutual_coherence(d)?;
    let with_y = (0..d.n())
        .map(|j| dot_compensated(y, d.matrix().col(j)).abs())
        .fold(0.0f64, f64::max);
    let mu_aug = mu.max(with_y);
    Ok((mu_aug, mu_aug > mu + 1e-12))
}

/// A set of linearly independent columns whose span contains another column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpanViolation {
    pub support: Vec<usize>,
    pub spanned_column: usize,
}

/// Finds every `k`-subset of linearly independent columns whose span contains
/// a further column (least-squares residual below `1e-8·‖column‖`). Any hit
/// means no `k`-sparse representation can be certified by coherence.
pub fn spark_violation_scan(d: &Dictionary, k: usize) -> Result<Vec<SpanViolation>> {
    let n = d.n();
    if k == 0 || k >= n {
        return Err(Error::InvalidParameter(format!(
            "scan needs 1 <= k < N, got k={k}, N={n}"
        )));
    }
    let count = binomial(n, k);
    if count > ENUMERATION_CAP {
        return Err(Error::CombinatorialBlowup {
            n,
            k,
            count,
            cap: ENUMERATION_CAP,
        });
    }
    let x = d.matrix();
    let mut out = Vec::new();
    for support in KSubsets::new(n, k) {
        let sub_m = x.select_columns(&support);
        let qr = PivotedQr::factor(&sub_m);
        if qr.rank() < k {
            continue;
        }
        for j in (0..n).filter(|j| !support.contains(j)) {
            let col = x.col(j);
            let beta = qr.solve_least_squares(col);
            let resid = norm2(&sub(&sub_m.matvec(&beta), col));
            if resid < 1e-8 * norm2(col) {
                out.push(SpanViolation {
                    support: support.clone(),
                    spanned_column: j,
                });
            }
        }
    }
    Ok(out)
}

/// Least-squares residual of `target` on the columns in `support`.
pub fn span_residual(d: &Dictionary, support: &[usize], target: &[f64]) -> Result<f64> {
    let sub_m = d.matrix().select_columns(support);
    let beta = least_squares(&sub_m, target)?;
    Ok(norm2(&sub(&sub_m.matvec(&beta), target)))
}

/// Comparison of an externally estimated class-subspace dimension `d_l`
/// with the class size `N_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassDimensionCheck {
    pub class: usize,
    pub class_size: usize,
    pub dimension: usize,
    /// `N_l > d_l`: the class has more samples than needed to span it.
    pub surplus: bool,
    /// `d_l < ½(1 + 1/μ)`: a `d_l`-sparse class representation is certifiable.
    pub certifiable: bool,
}

impl ClassDimensionCheck {
    /// With a surplus, some test sample needs all `d_l` directions, and the
    /// class columns are dependent, so the noiseless bound cannot hold for it.
    pub fn conflicts(&self) -> bool {
        self.surplus
    }
}

/// Runs the comparison for every class given estimated dimensions
/// (`dims[l-1]` for class `l`).
pub fn class_dimension_checks(d: &Dictionary, dims: &[usize]) -> Result<Vec<ClassDimensionCheck>> {
    let sizes = d.class_sizes()?;
    if dims.len() != sizes.len() {
        return Err(Error::dims(format!(
            "{} dimension estimates for {} classes",
            dims.len(),
            sizes.len()
        )));
    }
    let cert = certificate(d)?;
    Ok(sizes
        .iter()
        .zip(dims)
        .enumerate()
        .map(|(i, (&n_l, &d_l))| ClassDimensionCheck {
            class: i + 1,
            class_size: n_l,
            dimension: d_l,
            surplus: n_l > d_l,
            certifiable: cert.verdict_noiseless(d_l),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dict(cols: &[Vec<f64>]) -> Dictionary {
        Dictionary::from_raw(&Mat::from_columns(cols).unwrap(), None).unwrap()
    }

    #[test]
    fn coherence_of_orthonormal_and_duplicate() {
        assert_eq!(
            mutual_coherence(&Dictionary::new(Mat::identity(4), None).unwrap()).unwrap(),
            0.0
        );
        let d = dict(&[vec![0.6, 0.8], vec![1.0, 0.0], vec![0.6, 0.8]]);
        assert!((mutual_coherence(&d).unwrap() - 1.0).abs() < 1e-15);
        let single = Dictionary::new(Mat::identity(1), None).unwrap();
        assert!(matches!(
            mutual_coherence(&single),
            Err(Error::TooFewColumns(1))
        ));
    }

    #[test]
    fn welch_values() {
        assert!((welch_bound(50, 100).unwrap() - (50.0f64 / 4950.0).sqrt()).abs() < 1e-15);
        assert!((welch_bound(3, 4).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        for m in 1..20 {
            assert!((welch_bound(m, m + 1).unwrap() - 1.0 / m as f64).abs() < 1e-15);
        }
        assert!(matches!(
            welch_bound(5, 5),
            Err(Error::NotUnderdetermined { .. })
        ));
    }

    #[test]
    fn certificate_strict_and_weak_inequalities() {
        let c = RecoveryCertificate::from_mu(0.2, None);
        assert!((c.k_max_noiseless - 3.0).abs() < 1e-15);
        assert!(c.verdict_noiseless(2) && !c.verdict_noiseless(3));
        let c = RecoveryCertificate::from_mu(1.0 / 3.0, None);
        assert!(!c.verdict_noiseless(2));
        assert!(c.verdict_noisy(1) && !c.verdict_noisy(2));
        let c = RecoveryCertificate::from_mu(1.0, None);
        assert!(!c.verdict_noiseless(1));
        let c = RecoveryCertificate::from_mu(0.0, None);
        assert!(c.k_max_noiseless.is_infinite() && c.verdict_noisy(1000));
        assert!(c.k_max_noisy <= c.k_max_noiseless);
    }

    #[test]
    fn stability_examples() {
        let s = stability_constants(0.1, 2).unwrap();
        // independent evaluation: sqrt(0.8)/0.6 and times sqrt(2)
        let gamma = 0.8f64.sqrt() / 0.6;
        assert!((s.beta - 0.2).abs() < 1e-15);
        assert!((s.gamma.unwrap() - gamma).abs() < 1e-14);
        assert!((s.gamma.unwrap() - 1.4907).abs() < 1e-4);
        assert!((s.c.unwrap() - 2.108).abs() < 1e-3);
        assert!(s.error_bound(0.1, 0.1).is_some());

        let s = stability_constants(0.0, 7).unwrap();
        assert_eq!(s.gamma, Some(1.0));
        assert!((s.c.unwrap() - 7f64.sqrt()).abs() < 1e-15);

        let s = stability_constants(0.3, 2).unwrap();
        assert!(s.gamma.is_none() && s.c.is_none());
        // μ(4k−1) = 2.1 ≥ 1
        assert!(s.error_bound(0.1, 0.0).is_none());
    }

    #[test]
    fn test_sample_coherence() {
        let d = dict(&[vec![1.0, 0.0, 0.0], vec![0.6, 0.8, 0.0]]);
        let (mu_aug, inc) = coherence_with_test(&d, &[0.0, 0.0, 1.0]).unwrap();
        assert!((mu_aug - 0.6).abs() < 1e-15 && !inc);
        let (mu_aug, inc) = coherence_with_test(&d, &[1.0, 0.0, 0.0]).unwrap();
        assert!((mu_aug - 1.0).abs() < 1e-15 && inc);
        assert!(matches!(
            coherence_with_test(&d, &[2.0, 0.0, 0.0]),
            Err(Error::NotNormalized(_))
        ));
    }

    #[test]
    fn spark_scan_finds_constructed_span() {
        let s = 0.5f64.sqrt();
        let d = dict(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![s, s, 0.0]]);
        let hits = spark_violation_scan(&d, 2).unwrap();
        // each pair spans the plane containing the third column
        assert_eq!(hits.len(), 3);
        assert_eq!(
            hits[0],
            SpanViolation {
                support: vec![0, 1],
                spanned_column: 2
            }
        );
        let ortho = Dictionary::new(Mat::identity(5), None).unwrap();
        assert!(spark_violation_scan(&ortho, 3).unwrap().is_empty());
    }

    #[test]
    fn spark_scan_refuses_large_enumerations() {
        let d = Dictionary::new(Mat::identity(100), None).unwrap();
        assert!(matches!(
            spark_violation_scan(&d, 5),
            Err(Error::CombinatorialBlowup { .. })
        ));
    }

    #[test]
    fn labels_are_validated() {
        let m = Mat::identity(3);
        assert!(Dictionary::new(m.clone(), Some(vec![1, 1, 2])).is_ok());
        assert!(Dictionary::new(m.clone(), Some(vec![1, 3, 3])).is_err());
        assert!(Dictionary::new(m.clone(), Some(vec![0, 1, 2])).is_err());
        assert!(Dictionary::new(m, Some(vec![1, 2])).is_err());
        let not_unit = Mat::from_columns(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            Dictionary::new(not_unit, None),
            Err(Error::NotUnitColumns { column: 0, .. })
        ));
    }

    #[test]
    fn class_dimension_comparison() {
        let d = Dictionary::new(Mat::identity(4), Some(vec![1, 1, 1, 2])).unwrap();
        let checks = class_dimension_checks(&d, &[2, 1]).unwrap();
        assert!(checks[0].surplus && checks[0].conflicts());
        assert!(!checks[1].surplus);
        assert!(checks[1].certifiable);
    }

    fn unit_dict(m: usize, n: usize) -> impl Strategy<Value = Dictionary> {
        prop::collection::vec(-1.0f64..1.0, m * n).prop_filter_map("nonzero columns", move |v| {
            let raw = Mat::new(m, n, v).ok()?;
            (0..n).all(|j| norm2(raw.col(j)) > 1e-2).then_some(())?;
            Dictionary::from_raw(&raw, None).ok()
        })
    }

    proptest! {
        #[test]
        fn coherence_respects_welch(d in unit_dict(4, 9)) {
            let mu = mutual_coherence(&d).unwrap();
            prop_assert!(mu >= welch_bound(4, 9).unwrap() - 1e-12);
            prop_assert!(mu <= 1.0 + 1e-12);
        }

        #[test]
        fn coherence_invariant_under_sign_flip(d in unit_dict(5, 8), j in 0usize..8) {
            let a = mutual_coherence(&d).unwrap();
            let b = mutual_coherence(&d.with_negated_column(j)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn coherence_invariant_under_rotation(d in unit_dict(3, 6), theta in 0.0f64..6.3) {
            // rotation in the first two coordinates, embedded in 3D
            let (c, s) = (theta.cos(), theta.sin());
            let q = Mat::from_rows(&[
                vec![c, -s, 0.0],
                vec![s, c, 0.0],
                vec![0.0, 0.0, 1.0],
            ]).unwrap();
            let rotated = q.tr_mul(d.matrix());
            let a = mutual_coherence(&d).unwrap();
            let b = coherence_of(&rotated).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn verdicts_are_monotone(mu in 0.0f64..1.0, k in 2usize..50) {
            let c = RecoveryCertificate::from_mu(mu, None);
            if c.verdict_noiseless(k) { prop_assert!(c.verdict_noiseless(k - 1)); }
            if c.verdict_noisy(k) { prop_assert!(c.verdict_noisy(k - 1)); }
        }
    }
}
