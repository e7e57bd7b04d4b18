use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column {column} has norm {norm:e}, cannot normalize")]
    ZeroColumn { column: usize, norm: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("invalid matrix shape {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },

    #[error("mutual coherence needs at least two columns, got {0}")]
    TooFewColumns(usize),

    #[error("welch bound requires N > m (got m={m}, N={n})")]
    NotUnderdetermined { m: usize, n: usize },

    #[error("vector is not unit norm (norm = {0})")]
    NotNormalized(f64),

    #[error("columns are not unit norm: column {column} has norm {norm}")]
    NotUnitColumns { column: usize, norm: f64 },

    #[error("invalid labels: {0}")]
    InvalidLabels(String),

    #[error("dictionary is unlabeled")]
    Unlabeled,

    #[error("{n} choose {k} = {count} subsets exceeds the enumeration cap {cap}")]
    CombinatorialBlowup {
        n: usize,
        k: usize,
        count: u128,
        cap: u128,
    },

    #[error("homotopy path made no progress after {iters} events")]
    PathStall { iters: usize },

    #[error("optimality check failed: max correlation {max_corr:e} exceeds lambda {lambda:e}")]
    KktViolation { max_corr: f64, lambda: f64 },

    #[error("target vector is not in the column span (relative residual {0:e})")]
    Infeasible(f64),

    #[error("no representation with at most {k_cap} columns reaches the residual tolerance")]
    NoSolution { k_cap: usize },

    #[error("every coefficient falls below the threshold {0:e}")]
    EmptySupport(f64),

    #[error("ground-truth coefficient vector is zero")]
    ZeroGroundTruth,

    #[error("scaling to m={m_new} gives a non-integer class size; nearest valid is (N0={n0}, m={m_new}, L={l})")]
    NonIntegerScaling { m_new: usize, n0: usize, l: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
