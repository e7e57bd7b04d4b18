// `!(x > 0.0)` deliberately rejects NaN; index loops mirror the triangular solves.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod classify;
pub mod coherence;
pub mod datagen;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod numerics;
pub mod solvers;

pub use coherence::Dictionary;
pub use error::{Error, Result};
