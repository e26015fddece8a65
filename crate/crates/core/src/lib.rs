//! Out-of-distribution scores built from a classifier's penultimate
//! encoding and output distribution, with the explicit gradient
//! computations they summarize.

pub mod closed_form;
pub mod data;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod grad;
pub mod math;
pub mod rng;
pub mod verify;

pub use closed_form::Polarity;
pub use error::{Error, Result};
