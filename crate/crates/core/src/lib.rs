//! Recurrent language models trained to discriminate good sentences from bad
//! ones, with n-best rescoring and evaluation tooling.

pub mod checkpoint;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nbest;
pub mod nn;
pub mod rescore;
pub mod rng;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
