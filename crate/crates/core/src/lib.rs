//! Transfer-aware neural architecture search.
//!
//! The surrogate ([`xfernet`]) is a sequence autoencoder whose performance
//! predictor splits into a universal head shared by all tasks plus one
//! residual head per task. Knowledge from previously searched tasks trains
//! the universal head, which warm-starts the search ([`search`]) on a new
//! task before any of its architectures have been evaluated.

pub mod archspace;
pub mod error;
pub mod experiments;
pub mod search;
pub mod seed;
pub mod taskbench;
pub mod tensor;
pub mod xfernet;

pub use error::{Error, Result};
