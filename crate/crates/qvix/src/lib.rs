//! qvix — batch evaluation harness for exploratory pre-questions on
//! visual tasks.
//!
//! The pipeline: a generator model writes a handful of exploratory
//! questions from a task's instruction (and, for per-instance tasks, the
//! query); those questions are prepended to the multimodal prompt the
//! reasoner answers; answers are extracted against a fixed option list and
//! scored. Baseline (no pre-questions) and a two-stage think-first
//! condition run through the same machinery for comparison.
//!
//! Everything is deterministic by construction: seeded sampling and
//! generation, content-addressed request fingerprints, and an
//! order-preserving worker pool, so identical configs replay identical
//! runs regardless of parallelism.

pub mod adapters;
pub mod corpus;
pub mod error;
pub mod gateway;
pub mod hash;
pub mod model;
pub mod pregen;
pub mod prompt;
pub mod rng;
pub mod runner;
pub mod scoring;
pub mod shortlist;

pub use error::{QvixError, Result};
