//! Compound and visually grounded PCFG induction with cross-domain transfer
//! tooling.

pub mod analysis;
pub mod chart;
pub mod error;
pub mod evaluation;
pub mod grammar;
pub mod grounding;
pub mod lexicon;
pub mod logspace;
pub mod parameterization;
pub mod pipeline;

pub use error::{Error, Result};
