//! File formats, remote trace acquisition and the experiment pipeline around
//! [`inputrisk_core`].
//!
//! - [`io`]: dataset, trace, prediction, label, feature and model files.
//! - [`remote`]: traces from an OpenAI-compatible completions endpoint.
//! - [`pipeline`]: experiment configs, featurization, evaluation, ablation
//!   grids and report tables.
//! - [`num`]: the 10-significant-digit text encoding used in CSV and reports.

pub mod error;
pub mod io;
pub mod num;
pub mod pipeline;
pub mod remote;

pub use error::{Error, Result};
pub use inputrisk_core as core;
