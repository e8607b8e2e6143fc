//! Building blocks for turning a PII-annotated social-media corpus into a
//! synthetic equivalent and measuring how well the result preserves utility
//! and privacy.
//!
//! The crate is organised by pipeline stage: [`corpus`] ingestion and
//! filtering, [`annotation`] import and agreement, [`generation`] via a chat
//! backend, [`textmetrics`] for similarity scoring, [`privacy_eval`] for
//! unlinkability and survey statistics, and [`mleval`] for classifier scoring.

pub mod annotation;
pub mod corpus;
pub mod error;
pub mod generation;
pub mod jsonl;
pub mod mleval;
pub mod net;
pub mod privacy_eval;
pub mod textmetrics;

pub use error::{Error, Result};
