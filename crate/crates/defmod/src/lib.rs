//! Polysemy-aware definition modeling.
//!
//! The crate trains word embeddings (single-sense skip-gram and multi-sense
//! AdaGram), conditions recurrent definition generators on a word's
//! context-resolved meaning (via sense disambiguation or a learned attention
//! mask over the embedding), and evaluates generated definitions with
//! perplexity and BLEU.
//!
//! Start with the `examples/` directory: each example is a runnable
//! walkthrough of one capability. The `defmod` binary wires the same
//! pipeline behind subcommands.

pub mod adagram;
pub mod attention;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod defmodel;
pub mod error;
pub mod evaluate;
pub mod nn;
pub mod skipgram;
pub mod vectors;

pub use error::{Error, Result};
