//! Sequential unlearning for small decoder-only transformers.
//!
//! The crate trains a byte-level GPT-style model from scratch, fine-tunes it on
//! a retain corpus, suppresses a forget corpus by gradient ascent restricted to
//! the top of the network, and then stabilizes on the retain corpus with early
//! stopping. Every phase is instrumented: loss trajectories, perplexity,
//! forget-set likelihood and a behavioural probe that counts how often the
//! model still emits personal-data patterns.
//!
//! Modules, bottom-up:
//!
//! - [`grad`]: tape-based reverse-mode differentiation and finite-difference checks
//! - [`model`]: the transformer, greedy decoding and freeze policies
//! - [`data`]: byte tokenizer, synthetic corpora and batch collation
//! - [`trainer`]: AdamW and the three training phases
//! - [`eval`]: perplexity, forget NLL, the sensitive-pattern detector and probes
//! - [`persistence`]: checkpoints, metrics logs and corpus files
//! - [`config`] and [`cli`]: run configuration and the command implementations

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod grad;
pub mod model;
pub mod persistence;
pub mod trainer;

pub use error::{Error, Result};
