//! Build abusive-language classifiers from the datasets you already have:
//! train one shared masked-LM on many labeled corpora through per-dataset
//! pattern-verbalizer pairs, then specialize it to a new label set from a
//! few examples per label.
//!
//! The crate is organized along the pipeline:
//!
//! - [`corpus`]: manifests, label canonicalization, splits, leakage filter
//! - [`prompting`]: patterns, verbalizers, mask-position label scoring
//! - [`sampler`]: n-shot and distribution-following validation draws
//! - [`backend`]: the masked-LM trait plus a small trainable reference model
//! - [`trainer`]: the two-step method, its baselines and ablations
//! - [`eval`]: per-label F1, macro-F1, multi-seed aggregation
//! - [`report`]: report files, provenance records, run logs
//! - [`synthetic`]: keyword-separable fixture corpora for tests and demos

pub mod backend;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod prompting;
pub mod report;
pub mod sampler;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
