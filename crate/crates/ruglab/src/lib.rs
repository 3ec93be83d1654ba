//! Early rug-pull detection toolkit for DEX token launches.
//!
//! The pipeline: ingest swap/pool/token CSVs ([`data`]), decide ground-truth
//! rug labels from TVL collapse or trading silence ([`labeling`]), extract
//! launch-window features ([`features`]), train tree-ensemble classifiers
//! written from scratch ([`learners`]), score them ([`evaluation`]), and run
//! the cross-exchange experiment protocols ([`experiments`]). A seeded
//! synthetic corpus generator ([`synth`]) makes the whole pipeline testable
//! end to end without real chain data.

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod features;
pub mod labeling;
pub mod learners;
pub mod preprocess;

pub(crate) mod seeds;
pub mod synth;

pub use error::{Error, Result};
