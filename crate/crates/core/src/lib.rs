//! Object-hallucination evaluation for vision-language models.
//!
//! Two families of measurement live here. Caption-based scores (CHAIR)
//! match object mentions in free-form captions against annotated ground
//! truth. Polling-based scores (POPE) ask balanced yes/no questions about
//! present and absent objects and report classification metrics. The
//! [`stats`] module links hallucinations to object frequency and
//! co-occurrence.

pub mod builder;
pub mod chair;
pub mod cli;
pub mod client;
pub mod corpus;
pub mod error;
pub mod jsonl;
pub mod render;
pub mod scorer;
pub mod stats;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
