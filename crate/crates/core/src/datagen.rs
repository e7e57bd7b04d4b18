//! Synthetic data: the staged bouquet-with-classes databases, noise, the
//! redundancy-preserving rescaling, the kernel toy database, and implicit
//! kernel-space test samples.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::classify::{KernelModel, KernelTestSample};
use crate::coherence::Dictionary;
use crate::error::{Error, Result};
use crate::numerics::{norm2, normalize_columns, Mat};
use crate::solvers::CoefVector;

pub type Rng64 = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a master seed, an index, and a
/// purpose tag, so that trials can run in any order.
pub fn derive_seed(master: u64, index: u64, tag: &str) -> u64 {
    // FNV-1a over the tag
    let tag_hash = tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    });
    splitmix64(splitmix64(splitmix64(master) ^ index) ^ tag_hash)
}

pub fn rng_from(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian_vec(rng: &mut Rng64, n: usize, mean: &[f64], std: f64) -> Vec<f64> {
    (0..n)
        .map(|i| mean[i] + std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Rescales to the given norm; a zero target gives the zero vector.
fn rescale(v: &mut [f64], target: f64) {
    if target == 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let n = norm2(v);
    v.iter_mut().for_each(|x| *x *= target / n);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StagedDatabaseSpec {
    pub n0: usize,
    pub m: usize,
    pub l: usize,
    pub stage: usize,
    pub seed: u64,
}

/// The four database sizes used throughout the recovery studies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatabaseId {
    Db1,
    Db2,
    Db3,
    Db4,
}

impl DatabaseId {
    pub const ALL: [DatabaseId; 4] = [Self::Db1, Self::Db2, Self::Db3, Self::Db4];

    /// `(N0, m, L)`.
    pub fn dims(self) -> (usize, usize, usize) {
        match self {
            Self::Db1 => (5, 50, 20),
            Self::Db2 => (10, 50, 10),
            Self::Db3 => (10, 50, 50),
            Self::Db4 => (5, 200, 50),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Db1 => "DB-1",
            Self::Db2 => "DB-2",
            Self::Db3 => "DB-3",
            Self::Db4 => "DB-4",
        }
    }

    pub fn spec(self, stage: usize, seed: u64) -> StagedDatabaseSpec {
        let (n0, m, l) = self.dims();
        StagedDatabaseSpec {
            n0,
            m,
            l,
            stage,
            seed,
        }
    }
}

impl std::str::FromStr for DatabaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('_', "-").as_str() {
            "DB-1" | "DB1" => Ok(Self::Db1),
            "DB-2" | "DB2" => Ok(Self::Db2),
            "DB-3" | "DB3" => Ok(Self::Db3),
            "DB-4" | "DB4" => Ok(Self::Db4),
            _ => Err(Error::Parse(format!("unknown database id {s:?}"))),
        }
    }
}

/// Per-stage generator parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageParams {
    /// Norm of the cone mean and of every class mean.
    pub mu: f64,
    /// Spread of class means around the cone mean (before the `1/√m` factor).
    pub eta: f64,
}

impl StageParams {
    pub fn for_stage(stage: usize) -> Self {
        Self {
            mu: (stage as f64 - 1.0) / 10.0,
            eta: 2.0 / stage as f64,
        }
    }
}

impl StagedDatabaseSpec {
    pub fn n_tr(&self) -> usize {
        self.n0 * self.l
    }

    pub fn params(&self) -> StageParams {
        StageParams::for_stage(self.stage)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=11).contains(&self.stage) {
            return Err(Error::InvalidParameter(format!(
                "stage must be in 1..=11, got {}",
                self.stage
            )));
        }
        if self.n0 == 0 || self.l == 0 || self.m == 0 {
            return Err(Error::InvalidParameter(
                "N0, m and L must be positive".into(),
            ));
        }
        if self.n_tr() <= self.m {
            return Err(Error::NotUnderdetermined {
                m: self.m,
                n: self.n_tr(),
            });
        }
        Ok(())
    }

    pub fn with_stage(self, stage: usize) -> Self {
        Self { stage, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedInstance {
    pub dictionary: Dictionary,
    pub alpha0: CoefVector,
    pub y0: Vec<f64>,
    /// Noisy observation, when noise was added.
    pub y: Option<Vec<f64>>,
    pub zeta: f64,
}

impl GeneratedInstance {
    /// The noisy sample if present, the clean one otherwise.
    pub fn observed(&self) -> &[f64] {
        self.y.as_deref().unwrap_or(&self.y0)
    }
}

/// Samples a staged database with the test sample in the positive span of
/// class 1 (all `N0` class-1 columns carry weight).
pub fn gen_staged(spec: &StagedDatabaseSpec) -> Result<GeneratedInstance> {
    gen_staged_k(spec, spec.n0)
}

/// As [`gen_staged`] but only the first `k` class-1 columns carry weight.
pub fn gen_staged_k(spec: &StagedDatabaseSpec, k: usize) -> Result<GeneratedInstance> {
    spec.validate()?;
    if k == 0 || k > spec.n0 {
        return Err(Error::InvalidParameter(format!(
            "support size must be in 1..={}, got {k}",
            spec.n0
        )));
    }
    let StagedDatabaseSpec { n0, m, l, .. } = *spec;
    let p = spec.params();
    let mut rng = rng_from(spec.seed);
    let sm = (m as f64).sqrt();

    let mut cone = gaussian_vec(&mut rng, m, &vec![0.0; m], 1.0);
    rescale(&mut cone, p.mu);

    let mut data = Vec::with_capacity(m * n0 * l);
    let mut labels = Vec::with_capacity(n0 * l);
    for class in 1..=l {
        let mut mean = gaussian_vec(&mut rng, m, &cone, p.eta / sm);
        rescale(&mut mean, p.mu);
        for _ in 0..n0 {
            data.extend(gaussian_vec(&mut rng, m, &mean, p.eta / (sm * l as f64)));
            labels.push(class);
        }
    }
    let x = normalize_columns(&Mat::new(m, n0 * l, data)?)?;

    let mut alpha0 = vec![0.0; n0 * l];
    for a in alpha0.iter_mut().take(k) {
        *a = rng.random::<f64>();
    }
    let y0 = x.matvec(&alpha0);
    Ok(GeneratedInstance {
        dictionary: Dictionary::new(x, Some(labels))?,
        alpha0: CoefVector::new(alpha0),
        y0,
        y: None,
        zeta: 0.0,
    })
}

/// Adds i.i.d. Gaussian noise with standard deviation `ζ/(2√m)` to `y0`.
pub fn add_noise(inst: &GeneratedInstance, zeta: f64, seed: u64) -> Result<GeneratedInstance> {
    if !(zeta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise level must be positive, got {zeta}"
        )));
    }
    let m = inst.y0.len();
    let mut rng = rng_from(seed);
    let y = gaussian_vec(&mut rng, m, &inst.y0, zeta / (2.0 * (m as f64).sqrt()));
    Ok(GeneratedInstance {
        y: Some(y),
        zeta,
        ..inst.clone()
    })
}

/// Rescales `(N0, m, L)` to ambient dimension `m_new` while keeping
/// `m/N_tr` and `N0/L` fixed.
pub fn scale_spec(spec: &StagedDatabaseSpec, m_new: usize) -> Result<StagedDatabaseSpec> {
    if m_new < spec.m {
        return Err(Error::InvalidParameter(format!(
            "new dimension {m_new} is below the current {}",
            spec.m
        )));
    }
    let r1 = spec.m as f64 / spec.n_tr() as f64;
    let r2 = spec.n0 as f64 / spec.l as f64;
    let l_exact = (m_new as f64 / (r1 * r2)).sqrt();
    let l_new = l_exact.round() as usize;
    let n0_new = r2 * l_new as f64;
    if (n0_new - n0_new.round()).abs() < 1e-9 && n0_new >= 1.0 {
        return Ok(StagedDatabaseSpec {
            n0: n0_new.round() as usize,
            m: m_new,
            l: l_new,
            ..*spec
        });
    }
    // nearest L (to the unrounded value) that makes r2·L integral
    let (mut best_l, mut best_dist) = (0usize, f64::INFINITY);
    let lo = (l_exact / 2.0).floor().max(1.0) as usize;
    let hi = (l_exact * 2.0).ceil() as usize + 1;
    for cand in lo..=hi {
        let n0c = r2 * cand as f64;
        if (n0c - n0c.round()).abs() < 1e-9 && n0c >= 1.0 {
            let dist = (cand as f64 - l_exact).abs();
            if dist < best_dist {
                best_l = cand;
                best_dist = dist;
            }
        }
    }
    Err(Error::NonIntegerScaling {
        m_new,
        n0: (r2 * best_l as f64).round() as usize,
        l: best_l,
    })
}

/// [`scale_spec`], falling back to the nearest valid sizes.
pub fn scale_spec_nearest(spec: &StagedDatabaseSpec, m_new: usize) -> Result<StagedDatabaseSpec> {
    match scale_spec(spec, m_new) {
        Err(Error::NonIntegerScaling { m_new, n0, l }) => Ok(StagedDatabaseSpec {
            n0,
            m: m_new,
            l,
            ..*spec
        }),
        other => other,
    }
}

/// Toy kernel database: class `l` is `N0` noisy copies of `e_l` in `R^m`,
/// unit-normalized.
pub fn gen_toy_kernel_db(n0: usize, m: usize, l: usize, eta: f64, seed: u64) -> Result<Dictionary> {
    if m < l || n0 == 0 || l == 0 {
        return Err(Error::InvalidParameter(format!(
            "toy database needs m >= L >= 1 and N0 >= 1 (N0={n0}, m={m}, L={l})"
        )));
    }
    if !(eta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise must be nonnegative, got {eta}"
        )));
    }
    let mut rng = rng_from(seed);
    let mut data = Vec::with_capacity(m * n0 * l);
    let mut labels = Vec::with_capacity(n0 * l);
    for class in 1..=l {
        let mut e = vec![0.0; m];
        e[class - 1] = 1.0;
        for _ in 0..n0 {
            data.extend(gaussian_vec(&mut rng, m, &e, eta));
            labels.push(class);
        }
    }
    let x = normalize_columns(&Mat::new(m, n0 * l, data)?)?;
    Dictionary::new(x, Some(labels))
}

/// Default toy database sizes `(N0, m, L)`.
pub const TOY_DEFAULT: (usize, usize, usize) = (5, 50, 20);

/// Implicit kernel-space test samples: for each class, `per_class`
/// coefficient vectors supported on that class with `Unif(0,1)` entries.
pub fn gen_kernel_test_samples(
    model: &KernelModel,
    per_class: usize,
    seed: u64,
) -> Result<Vec<KernelTestSample>> {
    kernel_test_samples_for_labels(model.labels(), per_class, seed)
}

pub fn kernel_test_samples_for_labels(
    labels: &[usize],
    per_class: usize,
    seed: u64,
) -> Result<Vec<KernelTestSample>> {
    if per_class == 0 {
        return Err(Error::InvalidParameter(
            "per_class must be at least 1".into(),
        ));
    }
    let n = labels.len();
    let l = labels.iter().copied().max().unwrap_or(0);
    let mut rng = rng_from(seed);
    let mut out = Vec::with_capacity(l * per_class);
    for class in 1..=l {
        for _ in 0..per_class {
            let c: Vec<f64> = (0..n)
                .map(|j| {
                    if labels[j] == class {
                        rng.random::<f64>()
                    } else {
                        0.0
                    }
                })
                .collect();
            out.push(KernelTestSample {
                coefs: CoefVector::new(c),
                label: class,
            });
        }
    }
    Ok(out)
}

/// Two classes of two unit vectors in the plane; coherence `cos(π/4 − ε)`.
pub fn embedding_example_2d(eps: f64) -> Result<Dictionary> {
    let t1 = PI / 4.0 - eps;
    let t2 = 3.0 * PI / 4.0 - eps;
    let x = Mat::from_columns(&[
        vec![1.0, 0.0],
        vec![t1.cos(), t1.sin()],
        vec![0.0, 1.0],
        vec![t2.cos(), t2.sin()],
    ])?;
    Dictionary::from_raw(&x, Some(vec![1, 1, 2, 2]))
}

/// The same two classes lifted into three dimensions, lowering coherence.
pub fn embedding_example_3d(eps: f64) -> Result<Dictionary> {
    let (t1, t2) = (PI / 4.0 - eps, PI / 4.0 + eps);
    let (p1, p2) = (3.0 * PI / 4.0, PI / 4.0);
    let x = Mat::from_columns(&[
        vec![1.0, 0.0, 0.0],
        vec![t1.cos() * p1.sin(), t1.sin() * p1.sin(), p1.cos()],
        vec![0.0, 1.0, 0.0],
        vec![t2.cos() * p2.sin(), t2.sin() * p2.sin(), p2.cos()],
    ])?;
    Dictionary::from_raw(&x, Some(vec![1, 1, 2, 2]))
}
