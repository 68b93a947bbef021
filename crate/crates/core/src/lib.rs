//! Input-side error anticipation for language models.
//!
//! Everything in this crate works from the per-token likelihood trace a causal
//! language model assigns to a prompt, before any answer is generated:
//!
//! - [`corpus`]: dataset records, zero-shot prompt templates, answer parsing
//!   and error labels.
//! - [`trace`]: the per-token likelihood record and char-span to token mapping.
//! - [`toy_lm`]: a smoothed character bigram model that produces exact traces.
//! - [`measures`]: surprisal, entropy, confidence-weighted surprisal (CWS),
//!   contextual influence score (CIS), max probability and oddballness.
//! - [`features`]: aggregated and span-localized feature vectors and the
//!   single-scalar baselines.
//! - [`learn`]: standardization, stratified splits, logistic regression, MLP,
//!   and error-class metrics.
//! - [`synth`]: deterministic synthetic suites with planted in-span spikes.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! remote scoring live in the `inputrisk` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod corpus;
mod error;
pub mod features;
pub mod learn;
mod math;
pub mod measures;
pub mod synth;
pub mod toy_lm;
pub mod trace;

pub use error::{Error, Result};
