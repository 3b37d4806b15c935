//! Fairness-aware stochastic ranking for retrieval-augmented generation and
//! the evaluation pipeline around it: Plackett-Luce sampling with a
//! temperature knob, expected-exposure disparity/relevance under a
//! machine-user browsing model, expected utility of generations, and
//! utility-gain labeling of corpus items.

pub mod collection;
pub mod error;
pub mod exposure;
pub mod generation;
pub mod harness;
pub mod retrievers;
pub mod rng;
pub mod sampler;

pub use error::{Error, GenerationError, Result};
