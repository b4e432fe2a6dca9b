//! Schema-network inference for token sequences.
//!
//! This crate implements a variational model in which each token sequence is
//! encoded as a biased random walk over the nodes of a global latent graph
//! (the *schema network*). The walk visits a sequence of symbols — the
//! *schema* — and tokens are emitted conditioned on the visited symbols. Both
//! the per-sequence walk posterior and the global graph posterior are trained
//! end to end with Gumbel-Softmax relaxations, and the objective swaps the
//! per-sequence walk KL for the KL of the aggregated posterior, which adds a
//! data/representation mutual-information bonus.
//!
//! The crate ships a synthetic-language test bed with a known ground-truth
//! graph and an exact hidden-Markov-model likelihood oracle, so graph
//! recovery and likelihood can be verified quantitatively.
//!
//! Start from the `examples/` directory: each example exercises one major
//! capability (dataset generation, training, evaluation, graph statistics,
//! schema-conditioned decoding). The `schemanet` binary wraps the same
//! entry points behind `gen-data`, `train`, `eval` and `graph-stats`
//! subcommands for reproducible runs.

pub mod autodiff;
pub mod decoder;
pub mod params;
pub mod encoder;
pub mod eval;
pub mod graph;
pub mod graph_posterior;
pub mod objective;
pub mod relaxed;
pub mod run;
pub mod synthetic;
pub mod walks;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("dataset integrity error: {0}")]
    Integrity(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
