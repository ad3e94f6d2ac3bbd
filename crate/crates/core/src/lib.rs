//! Preference-optimization losses over an exactly differentiable bigram
//! policy.
//!
//! Start with [`corpus`] for data, [`losses`] for the objectives and their
//! gradients, [`noise`] for corruption models, [`trainer`] for SGD and
//! [`eval`] for win rates and the property suite. The guide under `book/`
//! walks through each of these; its code blocks run as doctests.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fixtures;
pub mod losses;
pub mod math;
pub mod noise;
pub mod policy;
pub mod quadrature;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/noise.md")]
    mod noise {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
