//! Mean-field variational Bayes for one-hidden-layer neural-network regression.

pub mod divergence;
pub mod elbo;
pub mod error;
pub mod experiment;
pub mod lemmas;
pub mod model;
pub mod priors;
pub mod quadrature;
pub mod report;
pub mod rng;
pub mod special;
pub mod stats;
pub mod train;
pub mod variational;

pub use error::{Error, Result};

// Compile and run the guide's snippets as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/priors.md")]
    mod priors {}
    #[doc = include_str!("../../../book/src/variational.md")]
    mod variational {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/divergences.md")]
    mod divergences {}
    #[doc = include_str!("../../../book/src/checks.md")]
    mod checks {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
