//! Benchmark dataset model, JSONL ingestion, query expansion, and seeded
//! subsampling.
//!
//! One sample bundles five related queries with five content sources and
//! marks one source as the optimization target. The on-disk form is JSONL,
//! one sample per line:
//!
//! ```json
//! {"sample_id": "s-001", "queries": ["<canonical>", "<v1>", "<v2>", "<v3>", "<v4>"],
//!  "sources": [{"id": 1, "title": "...", "text": "...", "origin": "..."}, ...],
//!  "target": 3}
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{ChatRequest, Gateway, GenParams};
use crate::prng::{partial_shuffle_indices, Prng};
use crate::templates::TemplateSet;

pub const SOURCES_PER_SAMPLE: usize = 5;
pub const VARIANTS_PER_QUERY: usize = 4;

/// One retrievable document; `text` is the unit of optimization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentSource {
    pub source_id: u32,
    pub title: String,
    pub text: String,
    pub origin_tag: Option<String>,
}

/// A canonical query plus its semantically related variants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryGroup {
    pub canonical_query: String,
    pub variants: Vec<String>,
}

impl QueryGroup {
    /// Canonical query followed by the variants.
    pub fn all(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical_query.as_str()).chain(self.variants.iter().map(String::as_str))
    }

    pub fn len(&self) -> usize {
        1 + self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchSample {
    pub sample_id: String,
    pub query_group: QueryGroup,
    pub sources: Vec<ContentSource>,
    /// 1-based id of the source a strategy rewrites.
    pub target_index: u32,
}

impl BenchSample {
    pub fn target_source(&self) -> &ContentSource {
        &self.sources[(self.target_index - 1) as usize]
    }

    /// The sample's sources with the target's text swapped for `optimized`.
    pub fn sources_with_target_text(&self, optimized: &str) -> Vec<ContentSource> {
        let mut sources = self.sources.clone();
        sources[(self.target_index - 1) as usize].text = optimized.to_string();
        sources
    }
}

// ---------------------------------------------------------------------------
// wire records

#[derive(Serialize, Deserialize)]
struct SourceRecord {
    id: u32,
    title: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    origin: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    sample_id: String,
    queries: Vec<String>,
    sources: Vec<SourceRecord>,
    target: u32,
}

fn violation(line: usize, reason: String) -> Error {
    Error::InvariantViolation { line, reason }
}

fn validate_sources(line: usize, sources: &[SourceRecord]) -> Result<()> {
    if sources.len() != SOURCES_PER_SAMPLE {
        return Err(violation(
            line,
            format!("sources: expected {SOURCES_PER_SAMPLE}, got {}", sources.len()),
        ));
    }
    for (i, source) in sources.iter().enumerate() {
        if source.id != (i + 1) as u32 {
            return Err(violation(
                line,
                format!("sources: ids must run 1..{SOURCES_PER_SAMPLE} without gaps, position {} has id {}", i + 1, source.id),
            ));
        }
        if source.text.is_empty() {
            return Err(violation(line, format!("sources: source {} has empty text", source.id)));
        }
    }
    Ok(())
}

fn validate_queries(line: usize, queries: &[String], expect_full: bool) -> Result<()> {
    if queries.is_empty() || queries[0].is_empty() {
        return Err(violation(line, "queries: canonical query missing or empty".into()));
    }
    if expect_full && queries.len() != 1 + VARIANTS_PER_QUERY {
        return Err(violation(
            line,
            format!("queries: expected 1 canonical + {VARIANTS_PER_QUERY} variants, got {}", queries.len()),
        ));
    }
    let mut seen = HashSet::new();
    for q in queries {
        if q.is_empty() {
            return Err(violation(line, "variants: empty query variant".into()));
        }
        if !seen.insert(q.as_str()) {
            return Err(violation(line, format!("variants: duplicate query {q:?}")));
        }
    }
    Ok(())
}

fn sample_from_record(line: usize, record: SampleRecord, expect_full: bool) -> Result<BenchSample> {
    if record.sample_id.is_empty() {
        return Err(violation(line, "sample_id: empty".into()));
    }
    validate_queries(line, &record.queries, expect_full)?;
    validate_sources(line, &record.sources)?;
    if record.target < 1 || record.target as usize > record.sources.len() {
        return Err(violation(
            line,
            format!("target: {} does not address an existing source", record.target),
        ));
    }
    let mut queries = record.queries;
    let canonical_query = queries.remove(0);
    Ok(BenchSample {
        sample_id: record.sample_id,
        query_group: QueryGroup {
            canonical_query,
            variants: queries,
        },
        sources: record
            .sources
            .into_iter()
            .map(|s| ContentSource {
                source_id: s.id,
                title: s.title,
                text: s.text,
                origin_tag: s.origin,
            })
            .collect(),
        target_index: record.target,
    })
}

fn record_from_sample(sample: &BenchSample) -> SampleRecord {
    SampleRecord {
        sample_id: sample.sample_id.clone(),
        queries: sample.query_group.all().map(str::to_string).collect(),
        sources: sample
            .sources
            .iter()
            .map(|s| SourceRecord {
                id: s.source_id,
                title: s.title.clone(),
                text: s.text.clone(),
                origin: s.origin_tag.clone(),
            })
            .collect(),
        target: sample.target_index,
    }
}

fn parse_jsonl(content: &str, expect_full: bool) -> Result<Vec<BenchSample>> {
    let mut samples = Vec::new();
    let mut seen_ids = HashSet::new();
    for (i, raw) in content.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(raw).map_err(|e| Error::SchemaError {
            line,
            field: "sample".into(),
            reason: e.to_string(),
        })?;
        let sample = sample_from_record(line, record, expect_full)?;
        if !seen_ids.insert(sample.sample_id.clone()) {
            return Err(violation(line, format!("sample_id: duplicate {:?}", sample.sample_id)));
        }
        samples.push(sample);
    }
    Ok(samples)
}

/// Load a fully expanded dataset. Every record must satisfy the sample
/// invariants: five sources with ids 1..5, one canonical plus four distinct
/// variants, valid target.
pub fn load_dataset(path: &Path) -> Result<Vec<BenchSample>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&content, true)
}

/// Load seed samples for expansion: same schema, but any number of queries
/// (at least the canonical one) is accepted.
pub fn load_seed_samples(path: &Path) -> Result<Vec<BenchSample>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&content, false)
}

pub fn save_dataset(path: &Path, samples: &[BenchSample]) -> Result<()> {
    let mut out = String::new();
    for sample in samples {
        let record = record_from_sample(sample);
        out.push_str(&serde_json::to_string(&record).expect("sample serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// The bundled synthetic dataset used by tests and demos: ten samples in the
/// standard schema, every source tagged "synthetic".
pub fn toy_dataset() -> Vec<BenchSample> {
    parse_jsonl(include_str!("../data/toy.jsonl"), true).expect("bundled toy dataset is valid")
}

// ---------------------------------------------------------------------------
// seeded subsampling

/// Deterministic selection of `n` samples without replacement. The result
/// order is the shuffle order; with `n == dataset.len()` this is a full
/// permutation. Identical `(dataset, n, seed)` give identical subsets on
/// every platform — see [`crate::prng`] for the pinned generator.
pub fn sample_subset(dataset: &[BenchSample], n: usize, seed: u64) -> Result<Vec<BenchSample>> {
    if n > dataset.len() {
        return Err(Error::NTooLarge {
            n,
            len: dataset.len(),
        });
    }
    Ok(partial_shuffle_indices(dataset.len(), n, seed)
        .into_iter()
        .map(|i| dataset[i].clone())
        .collect())
}

/// Seeded per-sample target assignment for freshly expanded samples: an
/// independent stream per sample id, uniform over the five sources.
pub fn assign_target(sample_id: &str, seed: u64) -> u32 {
    1 + Prng::seed_from_tagged(seed, sample_id).next_index(SOURCES_PER_SAMPLE) as u32
}

// ---------------------------------------------------------------------------
// query expansion

/// LLM-backed generation of semantically related query variants.
pub struct QueryExpander<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateSet,
    pub model_id: String,
    pub params: GenParams,
    /// Total completion attempts before giving up on distinct variants.
    pub max_attempts: u32,
}

impl QueryExpander<'_> {
    /// Ask the model for `n_variants` distinct paraphrases of `seed_query`.
    /// Lines equal to the seed query or to an already collected variant are
    /// dropped; missing variants are re-requested (with the rejected output
    /// in context) until the bound runs out.
    pub fn expand(
        &self,
        seed_query: &str,
        sources: &[ContentSource],
        n_variants: usize,
    ) -> Result<QueryGroup> {
        if n_variants < 1 {
            return Err(Error::InvalidInput {
                reason: "n_variants must be at least 1".into(),
            });
        }
        if seed_query.is_empty() {
            return Err(Error::InvalidInput {
                reason: "seed query is empty".into(),
            });
        }

        let titles: Vec<&str> = sources.iter().map(|s| s.title.as_str()).collect();
        let prompt = self.templates.render(
            "stages/expand",
            &[
                ("n", &n_variants.to_string()),
                ("titles", &titles.join("; ")),
                ("query", seed_query),
            ],
        )?;
        let mut request = ChatRequest::single_user(&self.model_id, self.params, prompt);

        let mut variants: Vec<String> = Vec::new();
        for _attempt in 0..self.max_attempts.max(1) {
            let response = self.gateway.complete(&request)?;
            for line in response.text.lines() {
                let candidate = strip_list_prefix(line).trim();
                if candidate.is_empty() {
                    continue;
                }
                let duplicate = candidate.eq_ignore_ascii_case(seed_query)
                    || variants.iter().any(|v| v.eq_ignore_ascii_case(candidate));
                if !duplicate {
                    variants.push(candidate.to_string());
                    if variants.len() == n_variants {
                        return Ok(QueryGroup {
                            canonical_query: seed_query.to_string(),
                            variants,
                        });
                    }
                }
            }
            let missing = n_variants - variants.len();
            request = request.with_followup(
                response.text,
                format!(
                    "Some of those duplicated the original query or each other. Provide {missing} additional distinct variant(s), same format."
                ),
            );
        }
        Err(Error::DuplicateVariantsAfterRetries {
            attempts: self.max_attempts.max(1),
        })
    }
}

/// Drop a leading "1." / "2)" / "-" / "*" list marker.
fn strip_list_prefix(line: &str) -> &str {
    let trimmed = line.trim_start();
    let after_digits = trimmed.trim_start_matches(|c: char| c.is_ascii_digit());
    if after_digits.len() < trimmed.len() {
        if let Some(rest) = after_digits.strip_prefix(['.', ')']) {
            return rest;
        }
        return trimmed;
    }
    trimmed
        .strip_prefix(['-', '*'])
        .unwrap_or(trimmed)
}
