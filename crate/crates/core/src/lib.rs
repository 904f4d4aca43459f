//! Core library for a desk-scale controllable text generation workbench:
//! a minimal f64 tensor/autodiff substrate, miniature transformer language
//! models with trainable soft prompts on a frozen backbone, expert/anti-expert
//! steered nucleus decoding, a small sentiment classifier, and the evaluation
//! battery (perplexity, Dist-n, n-gram overlap, greedy embedding matching,
//! LIME-style token attributions).

pub mod classifier;
pub mod config;
pub mod corpus;
pub mod decoding;
pub mod error;
pub mod eval;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::rng::SplitRng;
