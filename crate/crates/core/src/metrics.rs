//! Evaluation quantities: recovery and support errors, class residual
//! summaries, kernel sweep aggregates, kernel correlation diagnostics,
//! class-contribution profiles, and the σ selection rules.

use crate::classify::{ClassDecision, KernelModel, KernelTestSample};
use crate::error::{Error, Result};
use crate::numerics::{norm1, norm2, sub};
use crate::solvers::CoefVector;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoveryErrors {
    /// `‖α₁ − α₀‖₂ / ‖α₀‖₂`.
    pub err_l2: f64,
    /// Fraction of the support of `α₁` lying outside class 1.
    pub err_supp: f64,
    /// `‖α₁^off‖₂ / ‖α₁‖₂`.
    pub err_supp_l2: f64,
    /// `‖α₁^off‖₁ / ‖α₁‖₁`.
    pub err_supp_l1: f64,
    pub mu: f64,
    /// `α₁` had an empty support, so the support ratios were set to 0.
    pub degenerate: bool,
}

/// Compares a recovered vector against the ground truth. `in_class` marks
/// the ground-truth class columns.
pub fn recovery_errors(
    alpha1: &CoefVector,
    alpha0: &CoefVector,
    in_class: &[bool],
    mu: f64,
    tau: f64,
) -> Result<RecoveryErrors> {
    let n = alpha0.len();
    if alpha1.len() != n || in_class.len() != n {
        return Err(Error::dims(
            "coefficient vectors and class mask differ in length",
        ));
    }
    let a0_norm = alpha0.l2();
    if a0_norm == 0.0 {
        return Err(Error::ZeroGroundTruth);
    }
    let err_l2 = norm2(&sub(&alpha1.entries, &alpha0.entries)) / a0_norm;
    let off: Vec<f64> = alpha1
        .entries
        .iter()
        .zip(in_class)
        .map(|(&a, &inside)| if inside { 0.0 } else { a })
        .collect();
    let l0_all = alpha1.l0_at(tau);
    let l0_off = off.iter().filter(|v| v.abs() > tau).count();
    let degenerate = l0_all == 0;
    let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
    let err_supp = if degenerate {
        0.0
    } else {
        l0_off as f64 / l0_all as f64
    };
    // off-support entries at or below τ are not errors
    let off_t: Vec<f64> = off
        .iter()
        .map(|&v| if v.abs() > tau { v } else { 0.0 })
        .collect();
    let (err_supp_l2, err_supp_l1) = if l0_off == 0 {
        (0.0, 0.0)
    } else {
        (
            ratio(norm2(&off_t), alpha1.l2()),
            ratio(norm1(&off_t), alpha1.l1()),
        )
    };
    Ok(RecoveryErrors {
        err_l2,
        err_supp,
        err_supp_l2,
        err_supp_l1,
        mu,
        degenerate,
    })
}

/// `(mean err_truth, mean min_{l≠truth} err_l)` over decisions.
pub fn class_residual_summary(
    decisions: &[ClassDecision],
    truth_class: usize,
) -> Result<(f64, f64)> {
    if decisions.is_empty() {
        return Err(Error::InvalidParameter("no decisions to summarize".into()));
    }
    let mut truth = 0.0;
    let mut other = 0.0;
    for d in decisions {
        truth += d.residuals[truth_class - 1];
        other += d
            .residuals
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != truth_class - 1)
            .map(|(_, &r)| r)
            .fold(f64::INFINITY, f64::min);
    }
    let n = decisions.len() as f64;
    Ok((truth / n, other / n))
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Median; the mean of the two central values for even lengths.
pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Per-test-sample outcome of a kernel classification.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleOutcome {
    /// `‖α₁‖₀(τ) / N_tr`.
    pub sparsity: f64,
    pub correct: bool,
    /// `‖δ_GT(α₁)‖₂ / ‖α₁‖₂`.
    pub supp_l2: f64,
    /// `‖δ_GT(α₁)‖₁ / ‖α₁‖₁`.
    pub supp_l1: f64,
}

impl SampleOutcome {
    pub fn new(alpha: &CoefVector, labels: &[usize], truth: usize, predicted: usize) -> Self {
        let gt: Vec<f64> = alpha
            .entries
            .iter()
            .zip(labels)
            .map(|(&a, &l)| if l == truth { a } else { 0.0 })
            .collect();
        let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
        Self {
            sparsity: alpha.l0() as f64 / alpha.len() as f64,
            correct: truth == predicted,
            supp_l2: ratio(norm2(&gt), alpha.l2()),
            supp_l1: ratio(norm1(&gt), alpha.l1()),
        }
    }
}

/// One row of a σ (or stage) sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub sigma: f64,
    pub sparsity: f64,
    pub accuracy: f64,
    pub supp_l2: f64,
    pub supp_l1: f64,
    pub corr_gt: f64,
    pub corr_other: f64,
}

/// Aggregates trials (outer) of test samples (inner): sparsity is the mean
/// over trials of the per-trial median; the other fields are means of
/// per-trial means. Correlation fields are left at zero.
pub fn kernel_sweep_point(sigma: f64, trials: &[Vec<SampleOutcome>]) -> Result<SweepPoint> {
    if trials.is_empty() || trials.iter().any(Vec::is_empty) {
        return Err(Error::InvalidParameter(
            "sweep point needs at least one trial with one test sample".into(),
        ));
    }
    let per = |f: &dyn Fn(&[SampleOutcome]) -> f64| {
        mean(&trials.iter().map(|t| f(t)).collect::<Vec<_>>())
    };
    Ok(SweepPoint {
        sigma,
        sparsity: per(&|t| median(&t.iter().map(|o| o.sparsity).collect::<Vec<_>>())),
        accuracy: per(&|t| {
            mean(
                &t.iter()
                    .map(|o| f64::from(o.correct as u8))
                    .collect::<Vec<_>>(),
            )
        }),
        supp_l2: per(&|t| mean(&t.iter().map(|o| o.supp_l2).collect::<Vec<_>>())),
        supp_l1: per(&|t| mean(&t.iter().map(|o| o.supp_l1).collect::<Vec<_>>())),
        corr_gt: 0.0,
        corr_other: 0.0,
    })
}

/// Kernel inner products between test samples and training columns for one
/// trial: `corr_gt` is the median over (test, same-class column) pairs;
/// `corr_other` is, per test sample, the median over other classes of the
/// median over that class's columns, then the median over test samples.
pub fn correlation_diagnostics(model: &KernelModel, tests: &[KernelTestSample]) -> (f64, f64) {
    let labels = model.labels();
    let classes = model.num_classes();
    let mut gt = Vec::new();
    let mut other = Vec::new();
    for t in tests {
        let kc = model.kernel_vector(&t.coefs.entries);
        let mut class_medians = Vec::new();
        for l in 1..=classes {
            let vals: Vec<f64> = kc
                .iter()
                .zip(labels)
                .filter(|(_, &lab)| lab == l)
                .map(|(&v, _)| v)
                .collect();
            if l == t.label {
                gt.extend(vals);
            } else {
                class_medians.push(median(&vals));
            }
        }
        if !class_medians.is_empty() {
            other.push(median(&class_medians));
        }
    }
    let corr_gt = median(&gt);
    // a single class has no "other" block; report it as equal to the truth
    let corr_other = if other.is_empty() {
        corr_gt
    } else {
        median(&other)
    };
    (corr_gt, corr_other)
}

/// Mean `|α|` over a batch, normalized to sum 1, with per-class sums.
pub fn class_contribution_profile(
    batch: &[CoefVector],
    labels: &[usize],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = batch
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty coefficient batch".into()))?;
    let n = first.len();
    let mut acc = vec![0.0; n];
    for a in batch {
        for (s, v) in acc.iter_mut().zip(&a.entries) {
            *s += v.abs();
        }
    }
    let total: f64 = acc.iter().sum();
    if total > 0.0 {
        acc.iter_mut().for_each(|v| *v /= total);
    }
    let classes = labels.iter().copied().max().unwrap_or(0);
    let mut sums = vec![0.0; classes];
    for (&v, &l) in acc.iter().zip(labels) {
        sums[l - 1] += v;
    }
    Ok((acc, sums))
}

/// Per-σ evidence for the σ selection rules.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaEvaluation {
    pub sigma: f64,
    /// `(‖α₁‖₀(τ), k_sup)` for every (trial, test sample) pair; `k_sup` comes
    /// from the kernel coherence of that pair's trial.
    pub pairs: Vec<(usize, f64)>,
    pub accuracy: f64,
}

/// `½(1 + 1/μ)`, infinite at `μ = 0`.
pub fn k_sup(mu_kernel: f64) -> f64 {
    if mu_kernel == 0.0 {
        f64::INFINITY
    } else {
        0.5 * (1.0 + 1.0 / mu_kernel)
    }
}

impl SigmaEvaluation {
    /// Fraction of pairs whose sparsity is certified by the coherence bound.
    pub fn pass_fraction(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        let passed = self
            .pairs
            .iter()
            .filter(|(k, cap)| (*k as f64) < *cap)
            .count();
        passed as f64 / self.pairs.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaChoice {
    pub sigma: f64,
    /// No grid value qualified; `sigma` is the smallest grid value.
    pub no_qualifying_sigma: bool,
}

/// Largest grid σ at which at least `confidence` of the pairs satisfy
/// `‖α₁‖₀ < k_sup(σ)`.
pub fn sigma_mc_from(evals: &[SigmaEvaluation], confidence: f64) -> Result<SigmaChoice> {
    let smallest = evals.iter().map(|e| e.sigma).fold(f64::INFINITY, f64::min);
    if evals.is_empty() {
        return Err(Error::InvalidParameter("empty σ grid".into()));
    }
    let best = evals
        .iter()
        .filter(|e| e.pass_fraction() >= confidence)
        .map(|e| e.sigma)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(if best.is_finite() {
        SigmaChoice {
            sigma: best,
            no_qualifying_sigma: false,
        }
    } else {
        SigmaChoice {
            sigma: smallest,
            no_qualifying_sigma: true,
        }
    })
}

/// Largest grid σ whose accuracy is within `tol` of the best on the grid.
pub fn sigma_acc_from(evals: &[SigmaEvaluation], tol: f64) -> Result<f64> {
    if evals.is_empty() {
        return Err(Error::InvalidParameter("empty σ grid".into()));
    }
    let best = evals
        .iter()
        .map(|e| e.accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(evals
        .iter()
        .filter(|e| e.accuracy >= best - tol)
        .map(|e| e.sigma)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Default plateau tolerance for [`sigma_acc_from`].
pub const SIGMA_ACC_TOL: f64 = 0.005;

/// Default pass fraction for [`sigma_mc_from`].
pub const SIGMA_MC_CONFIDENCE: f64 = 0.95;

/// `start·factor^i` for `i = 0..count`.
pub fn geometric_grid(start: f64, factor: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| start * factor.powi(i as i32)).collect()
}

/// Parses `start:factor:count` into a geometric grid, or a comma list of
/// explicit values.
pub fn parse_sigma_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |e: &dyn std::fmt::Display| Error::Parse(format!("bad σ grid {spec:?}: {e}"));
    let grid = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [start, factor, count] = parts[..] else {
            return Err(bad(&"expected start:factor:count"));
        };
        let start: f64 = start.trim().parse().map_err(|e| bad(&e))?;
        let factor: f64 = factor.trim().parse().map_err(|e| bad(&e))?;
        let count: usize = count.trim().parse().map_err(|e| bad(&e))?;
        if !(start > 0.0 && factor > 1.0 && count > 0) {
            return Err(bad(&"need start > 0, factor > 1, count > 0"));
        }
        geometric_grid(start, factor, count)
    } else {
        spec.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| bad(&e)))
            .collect::<Result<Vec<_>>>()?
    };
    if grid.is_empty() || grid.iter().any(|s| !(*s > 0.0)) {
        return Err(bad(&"σ values must be positive"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(bad(&"σ values must be strictly ascending"));
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::gaussian_gram;
    use crate::datagen::{gen_toy_kernel_db, kernel_test_samples_for_labels};
    use proptest::prelude::*;

    fn cv(v: &[f64]) -> CoefVector {
        CoefVector::new(v.to_vec())
    }

    #[test]
    fn exact_recovery_has_zero_errors() {
        let a0 = cv(&[0.5, 0.2, 0.0, 0.0]);
        let mask = [true, true, false, false];
        let e = recovery_errors(&a0, &a0, &mask, 0.3, 1e-10).unwrap();
        assert_eq!(
            (e.err_l2, e.err_supp, e.err_supp_l2, e.err_supp_l1),
            (0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn fully_off_support() {
        let a0 = cv(&[0.5, 0.2, 0.0, 0.0]);
        let a1 = cv(&[0.0, 0.0, 0.1, 0.4]);
        let e = recovery_errors(&a1, &a0, &[true, true, false, false], 0.0, 1e-10).unwrap();
        assert_eq!(e.err_supp, 1.0);
        assert!((e.err_supp_l2 - 1.0).abs() < 1e-15 && (e.err_supp_l1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_truth_and_zero_estimate() {
        let mask = [true, false];
        assert!(matches!(
            recovery_errors(&cv(&[1.0, 0.0]), &cv(&[0.0, 0.0]), &mask, 0.0, 1e-10),
            Err(Error::ZeroGroundTruth)
        ));
        let e = recovery_errors(&cv(&[0.0, 0.0]), &cv(&[1.0, 0.0]), &mask, 0.0, 1e-10).unwrap();
        assert!(e.degenerate && e.err_supp == 0.0 && e.err_l2 == 1.0);
    }

    #[test]
    fn residual_summary_means() {
        let dec = |r: Vec<f64>| ClassDecision {
            label: 1,
            residuals: r,
            coef: cv(&[0.0]),
        };
        let (t, o) =
            class_residual_summary(&[dec(vec![0.0, 2.0, 3.0]), dec(vec![0.1, 5.0, 4.0])], 1)
                .unwrap();
        assert!((t - 0.05).abs() < 1e-15 && (o - 3.0).abs() < 1e-15);
    }

    #[test]
    fn sweep_point_aggregation() {
        let o = |s: f64, c: bool| SampleOutcome {
            sparsity: s,
            correct: c,
            supp_l2: 1.0,
            supp_l1: 1.0,
        };
        let p = kernel_sweep_point(
            3.0,
            &[
                vec![o(0.1, true), o(0.3, true), o(0.2, false)],
                vec![o(1.0, true)],
            ],
        )
        .unwrap();
        assert!((p.sparsity - 0.6).abs() < 1e-15);
        assert!((p.accuracy - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
        assert_eq!((p.supp_l2, p.supp_l1), (1.0, 1.0));
        let dense = SampleOutcome::new(&cv(&[1.0, 1.0, 1.0]), &[1, 1, 2], 1, 1);
        assert_eq!(dense.sparsity, 1.0);
    }

    #[test]
    fn contribution_profiles() {
        let (p, sums) = class_contribution_profile(&[cv(&[0.0, 2.0, 0.0])], &[1, 1, 2]).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
        assert_eq!(sums, vec![1.0, 0.0]);
        let (p, _) =
            class_contribution_profile(&[cv(&[1.0, -1.0, 1.0, -1.0])], &[1, 1, 2, 2]).unwrap();
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn correlations_limits() {
        let d = gen_toy_kernel_db(5, 50, 20, 0.1, 1).unwrap();
        let tests = kernel_test_samples_for_labels(d.labels().unwrap(), 1, 2).unwrap();
        let model = gaussian_gram(&d, 0.05).unwrap();
        let (gt, other) = correlation_diagnostics(&model, &tests);
        assert!(gt >= other && other < 1e-12);
        let model = gaussian_gram(&d, 2.0).unwrap();
        let (gt, other) = correlation_diagnostics(&model, &tests);
        assert!(gt >= other);
        let single = gen_toy_kernel_db(5, 50, 1, 0.1, 1).unwrap();
        let m1 = gaussian_gram(&single, 1.0).unwrap();
        let t1 = kernel_test_samples_for_labels(m1.labels(), 2, 3).unwrap();
        let (gt, other) = correlation_diagnostics(&m1, &t1);
        assert_eq!(gt, other);
    }

    fn eval(sigma: f64, mu: f64, l0: Vec<usize>, acc: f64) -> SigmaEvaluation {
        SigmaEvaluation {
            sigma,
            pairs: l0.into_iter().map(|k| (k, k_sup(mu))).collect(),
            accuracy: acc,
        }
    }

    #[test]
    fn sigma_rules() {
        let grid = vec![
            eval(0.5, 0.01, vec![5; 20], 1.0),
            eval(1.0, 0.1, vec![5; 20], 1.0),
            eval(1.3, 0.3, vec![5; 20], 1.0),
        ];
        // k_sup at μ=0.1 is 5.5, at 0.3 it is ≈2.17
        let mc = sigma_mc_from(&grid, 0.95).unwrap();
        assert_eq!(
            mc,
            SigmaChoice {
                sigma: 1.0,
                no_qualifying_sigma: false
            }
        );
        assert_eq!(sigma_acc_from(&grid, 0.005).unwrap(), 1.3);

        let none = vec![
            eval(0.7, 0.9, vec![5; 4], 1.0),
            eval(0.9, 0.95, vec![5; 4], 0.5),
        ];
        let mc = sigma_mc_from(&none, 0.95).unwrap();
        assert!(mc.no_qualifying_sigma && mc.sigma == 0.7);
        assert_eq!(sigma_acc_from(&none, 0.005).unwrap(), 0.7);
    }

    #[test]
    fn grid_parsing() {
        let g = parse_sigma_grid("0.2:1.15:3").unwrap();
        assert_eq!(g.len(), 3);
        assert!((g[2] - 0.2 * 1.15 * 1.15).abs() < 1e-15);
        assert_eq!(parse_sigma_grid("1,3,5").unwrap(), vec![1.0, 3.0, 5.0]);
        assert!(parse_sigma_grid("3,1").is_err());
        assert!(parse_sigma_grid("0.2:0.9:3").is_err());
    }

    proptest! {
        #[test]
        fn support_ratios_bounded(
            a1 in prop::collection::vec(-1.0f64..1.0, 8),
            a0 in prop::collection::vec(0.1f64..1.0, 8),
            mask in prop::collection::vec(any::<bool>(), 8),
        ) {
            let e = recovery_errors(&cv(&a1), &cv(&a0), &mask, 0.5, 1e-10).unwrap();
            for v in [e.err_supp, e.err_supp_l2, e.err_supp_l1] {
                prop_assert!((0.0..=1.0 + 1e-15).contains(&v));
            }
            let off_support = a1.iter().zip(&mask).any(|(v, &m)| !m && v.abs() > 1e-10);
            prop_assert_eq!(e.err_supp == 0.0, !off_support);
            if e.err_supp == 0.0 {
                prop_assert!(e.err_supp_l2 == 0.0 && e.err_supp_l1 == 0.0);
            }
        }

        #[test]
        fn summary_is_order_invariant(
            rows in prop::collection::vec(prop::collection::vec(0.0f64..3.0, 3), 1..8),
        ) {
            let decs: Vec<ClassDecision> = rows.iter().map(|r| ClassDecision {
                label: 1, residuals: r.clone(), coef: cv(&[0.0]),
            }).collect();
            let mut rev = decs.clone();
            rev.reverse();
            let a = class_residual_summary(&decs, 1).unwrap();
            let b = class_residual_summary(&rev, 1).unwrap();
            prop_assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
        }
    }
}
