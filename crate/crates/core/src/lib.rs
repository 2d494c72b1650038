//! Filtered back-translation toolkit.
//!
//! Monolingual sentences are translated into a pivot language and back,
//! the round trip is scored against the original with smoothed sentence
//! BLEU, and sentences scoring above a mean-based threshold are kept as
//! synthetic parallel data.
//!
//! - [`textnorm`]: normalization and whitespace tokenization
//! - [`bleu`]: sentence and corpus BLEU
//! - [`corpus`]: streaming ingestion, dedup, length-ratio filtering, collation
//! - [`translate`]: translator registry with table, noise and remote backends
//! - [`filter`]: round trip, threshold, filtering and the two-pass pipeline
//! - [`report`]: retention and length-bias reports, experiment manifests
//! - [`synth`]: seeded synthetic corpora for simulation and tests

pub mod bleu;
pub mod corpus;
pub mod error;
pub mod filter;
pub mod report;
pub mod synth;
pub mod textnorm;
pub mod translate;

pub use error::{Error, ErrorKind, Result};
