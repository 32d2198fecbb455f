//! Early graph anomaly detection by augmenting users' observed action
//! sequences with predicted future actions.

// Negated float comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augmenter;
pub mod datagen;
pub mod detector;
pub mod error;
pub mod eval;
pub mod graph;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};

/// Book chapters, compiled and run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graph.md")]
    mod graph {}
    #[doc = include_str!("../../../book/src/detector.md")]
    mod detector {}
    #[doc = include_str!("../../../book/src/augmenter.md")]
    mod augmenter {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/datagen.md")]
    mod datagen {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
