//! Accelerated convex optimization with third-order models solved by
//! gradients and Hessians only. See the guide in `book/` for an overview.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bdgm;
pub mod error;
pub mod harness;
pub mod natmi;
pub mod oracle;
pub mod problems;
pub mod rng;
pub mod sliding;
pub mod taylor;
pub mod trace;

/// The guide in `book/`, compiled here so its examples run as doctests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/models.md")]
    pub mod models {}
    #[doc = include_str!("../../../book/src/method.md")]
    pub mod method {}
    #[doc = include_str!("../../../book/src/sliding.md")]
    pub mod sliding {}
    #[doc = include_str!("../../../book/src/harness.md")]
    pub mod harness {}
}
