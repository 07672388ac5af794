//! File formats, checkpoints and the batch pipeline around `causal-core`.

pub mod checkpoint;
pub mod cli;
pub mod embfile;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use error::{FormatError, FormatResult};
