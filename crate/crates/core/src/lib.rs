//! Content optimization for generative search engines, plus the evaluation
//! harness around it.
//!
//! A generative search engine answers a query by synthesizing a cited
//! response over retrieved sources. This crate implements the
//! creator-side counterpart: rewrite one source so it gets cited earlier and
//! more, without ever seeing the query. The pieces:
//!
//! - [`gateway`] — chat-completion access with retries, caching, bounded
//!   concurrency, and deterministic scripted replay for offline runs.
//! - [`corpus`] — benchmark samples (five queries, five sources, one
//!   optimization target), JSONL ingestion, query expansion, seeded
//!   subsampling.
//! - [`gse`] — the simulated engine: answer prompt construction and parsing
//!   of cited responses into ordered sentences.
//! - [`strategy`] — fourteen rewrite strategies: nine single-prompt
//!   baselines, the intent-driven four-phase pipeline, and four ablations.
//! - [`reflection`] — the Who/What/Why/How multi-role reflection that
//!   generalizes an inferred search intent.
//! - [`metrics`] — objective position-adjusted word counts, the
//!   seven-dimension 0-5 judge rubric, and normalized improvements.
//! - [`runner`] — resumable end-to-end experiments with aggregated reports.
//! - [`analysis`] — role and step preference distributions over traces.
//! - [`cli`] — the `gseo` command-line surface over all of the above.

pub mod analysis;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod gateway;
pub mod gse;
pub mod metrics;
pub mod prng;
pub mod reflection;
pub mod runner;
pub mod strategy;
pub mod templates;
pub mod testing;
mod viz;

pub use error::{Error, Result};
