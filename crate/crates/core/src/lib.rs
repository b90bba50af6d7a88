//! Sex and age classification of mice from stop-position histograms.
//!
//! [`featurize`] turns a trajectory into a stack of stop-count grids, [`nn`]
//! holds the two-branch CNN and its training, [`eval`] runs
//! leave-one-cage-out evaluation, [`baselines`] and [`explain`] compare and
//! inspect the network, and [`dataset`] loads or simulates recordings.

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod explain;
pub mod featurize;
pub mod label;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
pub use label::Stereotype;
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/featurize.md")]
    mod featurize {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/explain.md")]
    mod explain {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
}
