//! Average-distortion sketches for integer `ℓp` metrics.
//!
//! A sketch of `x ∈ [−Δ, Δ]^d` at scale `r` lets two parties sharing a
//! [`randomness::SharedSeed`] decide CLOSE or FAR from sketches alone. Pairs
//! within `r` decode FAR with small probability, and pairs drawn from a
//! distribution decode FAR with constant probability once they are `Ω(cr)`
//! apart on average. On top of the single-scale decoder sit a voting
//! booster ([`boosted`]), a multiscale estimator ([`estimator`]) and an
//! approximate near-neighbor index ([`ann`]). The [`cert`] module holds the
//! hard distribution and its certificates, and [`experiment`] the
//! Monte-Carlo drivers.

// Guards like `!(r > 0.0)` reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ann;
pub mod boosted;
pub mod cert;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod metric;
pub mod randomness;
pub mod sketch;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/foundations.md")]
    mod foundations {}
    #[doc = include_str!("../../../book/src/single_scale.md")]
    mod single_scale {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/near_neighbor.md")]
    mod near_neighbor {}
    #[doc = include_str!("../../../book/src/certification.md")]
    mod certification {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
