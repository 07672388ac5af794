//! Causal dense retrieval with three encoders.
//!
//! A *Cause* encoder and an *Effect* encoder are trained against the outputs
//! of a frozen *Semantic* encoder with in-batch contrastive losses: the cause
//! encoder learns to land on the semantic embedding of the matching effect,
//! the effect encoder on the semantic embedding of the matching cause, and a
//! β-weighted pair of semantic-preservation terms keeps each trainable output
//! close to the semantic embedding of its own input.
//!
//! The crate is `no_std` (with `alloc`) and performs no IO. File formats and
//! the command-line pipeline live in the `causal-retrieval` crate.
//!
//! Module map:
//! - [`text`]: normalization, vocabulary, tokenization.
//! - [`corpus`]: pair/triplet records, grouped splits, distractor pools, the
//!   synthetic causal corpus.
//! - [`encoder`]: the mean-pooled embedding encoder and its exact backward pass.
//! - [`loss`]: in-batch softmax losses and the combined causal + semantic loss.
//! - [`train`]: AdamW, epochs, validation and checkpoint selection.
//! - [`index`]: exact, chunked top-k retrieval.
//! - [`eval`]: Hit@k / MRR@k / nDCG@k, fuzzy answer matching, experiment drivers.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod index;
pub mod loss;
pub mod matrix;
mod rng;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use rng::derive_seed;
