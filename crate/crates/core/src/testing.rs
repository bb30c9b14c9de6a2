//! Deterministic test doubles for the gateway.
//!
//! [`StubModel`] is a rule-based stand-in for a chat model: it classifies
//! each prompt by the fixed marker phrases of the embedded templates and
//! synthesizes a plausible, fully deterministic response. Recording it
//! through [`crate::gateway::RecordingBackend`] produces complete fixture
//! sets for offline replay; tests and demos never need a live endpoint.
//!
//! [`InstrumentedBackend`] wraps any backend to observe call order, total
//! calls, and peak concurrency. [`SequenceBackend`] replays a fixed list of
//! responses regardless of digest, which is how retry paths are exercised.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::gateway::{Backend, BackendReply, ChatRequest};
use crate::gse::parse_answer;

/// Prompt classes recognized by the stub, keyed off template marker lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Answer,
    Summarize,
    Intent,
    Who,
    What,
    Why,
    How,
    Plan,
    Rewrite,
    RewriteSteps,
    RewriteDirect,
    BaselineRewrite,
    Judge,
    Expand,
    LabelRole,
    LabelStep,
    RubricGen,
}

/// Classify a prompt by the marker phrases of the embedded templates.
pub fn classify_prompt(prompt: &str) -> Option<PromptKind> {
    let head = prompt.trim_start();
    if head.starts_with("You are a generative search engine.") {
        Some(PromptKind::Answer)
    } else if head.starts_with("Summarize the content below") {
        Some(PromptKind::Summarize)
    } else if head.starts_with("Infer the search intent") {
        Some(PromptKind::Intent)
    } else if head.starts_with("List the representative user roles") {
        Some(PromptKind::Who)
    } else if head.starts_with("Describe the retrieval needs") {
        Some(PromptKind::What)
    } else if head.starts_with("Diagnose why the stated intent") {
        Some(PromptKind::Why)
    } else if head.starts_with("Reconstruct the intent below") {
        Some(PromptKind::How)
    } else if head.starts_with("Plan the optimization steps") {
        Some(PromptKind::Plan)
    } else if head.starts_with("You are grading one source's visibility") {
        Some(PromptKind::Judge)
    } else if head.starts_with("Generate ") && head.contains("semantically related variants") {
        Some(PromptKind::Expand)
    } else if head.starts_with("Choose the single category that best describes the user role") {
        Some(PromptKind::LabelRole)
    } else if head.starts_with("Classify the optimization step") {
        Some(PromptKind::LabelStep)
    } else if head.starts_with("Write a scoring rubric") {
        Some(PromptKind::RubricGen)
    } else if head.starts_with("Rewrite the content below to better serve the readers") {
        Some(PromptKind::RewriteDirect)
    } else if head.to_lowercase().contains("return only the rewritten text") {
        if head.contains("### Intent") {
            Some(PromptKind::Rewrite)
        } else if head.contains("### Steps") {
            Some(PromptKind::RewriteSteps)
        } else {
            Some(PromptKind::BaselineRewrite)
        }
    } else {
        None
    }
}

/// Extract a `### Name` section from a prompt.
pub fn prompt_section<'a>(prompt: &'a str, name: &str) -> Option<&'a str> {
    let header = format!("### {name}\n");
    let start = prompt.find(&header)? + header.len();
    let rest = &prompt[start..];
    let end = rest.find("\n### ").unwrap_or(rest.len());
    Some(rest[..end].trim())
}

fn fnv(text: &str) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Words with sentence punctuation and bracket characters stripped, so they
/// can be recombined into synthetic sentences without confusing the parser.
fn clean_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| !matches!(c, '.' | '!' | '?' | '[' | ']' | ':' | ';'))
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

fn take_words(text: &str, n: usize) -> String {
    let words = clean_words(text);
    words
        .iter()
        .cycle()
        .take(n.min(words.len().max(1) * 4).max(1))
        .cloned()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Marker the stub prepends to pipeline rewrites; answers cite sources whose
/// text carries it first and at greater length, so optimized content shows
/// measurable visibility gains.
pub const OPTIMIZED_MARK: &str = "Optimized:";
/// Marker for baseline rewrites; cited early but behind `OPTIMIZED_MARK`.
pub const TUNED_MARK: &str = "Tuned:";

/// Rule-based deterministic chat model.
pub struct StubModel;

impl StubModel {
    pub fn new() -> Self {
        StubModel
    }

    fn respond(&self, prompt: &str) -> Result<String> {
        let kind = classify_prompt(prompt).ok_or_else(|| Error::InvalidRequest {
            reason: format!(
                "stub model cannot classify prompt starting {:?}",
                prompt.chars().take(60).collect::<String>()
            ),
        })?;
        Ok(match kind {
            PromptKind::Answer => self.answer(prompt),
            PromptKind::Summarize => {
                let content = prompt_section(prompt, "Content").unwrap_or_default();
                format!("This piece centers on {}.", take_words(content, 12))
            }
            PromptKind::Intent => {
                let content = prompt_section(prompt, "Content").unwrap_or_default();
                format!(
                    "Readers want practical, trustworthy guidance about {}.",
                    take_words(content, 7)
                )
            }
            PromptKind::Who => "NAME: Educator\nPROFILE: Teaches the subject and needs structured, accurate material for lessons.\n\nNAME: Curious Hobbyist\nPROFILE: A hands-on enthusiast who wants clear everyday guidance without jargon.\n\nNAME: Market Analyst\nPROFILE: Tracks products and pricing in this space to inform business decisions.".to_string(),
            PromptKind::What => {
                let role = prompt_section(prompt, "Role")
                    .and_then(|r| r.split(':').next())
                    .unwrap_or("Reader")
                    .trim();
                format!(
                    "MOTIVATIONS:\n- Understand the essentials from the perspective of {role}\n- Compare the main options before committing\nGOALS:\n- Find guidance structured for {role}\n- Verify the claims against concrete details"
                )
            }
            PromptKind::Why => {
                let role = prompt_section(prompt, "Role").unwrap_or("Reader").trim();
                format!(
                    "GAP: The initial intent overlooks what {role} needs in practice.\nCAUSE: It assumes one generic reader rather than {role} specifically."
                )
            }
            PromptKind::How => {
                let intent = prompt_section(prompt, "Initial intent").unwrap_or_default();
                format!(
                    "Readers ranging from educators to hobbyists and analysts want {} presented with role-aware depth, verifiable specifics, and clear next steps.",
                    take_words(intent, 6)
                )
            }
            PromptKind::Plan => "1. OBJECTIVE: improve content completeness\n   ACTION: content enrichment and expansion\n   INSTRUCTION: Add the background details and practical context the current draft skips.\n2. OBJECTIVE: strengthen factual credibility\n   ACTION: content enrichment and expansion\n   INSTRUCTION: Incorporate concrete figures and verifiable references for the key claims.\n3. OBJECTIVE: increase clarity\n   ACTION: content restructuring\n   INSTRUCTION: Reorder the material so the core guidance leads and supporting detail follows.\n4. OBJECTIVE: reduce noise\n   ACTION: redundancy reduction\n   INSTRUCTION: Cut repeated phrasing and filler that dilutes the main points.".to_string(),
            PromptKind::Rewrite | PromptKind::RewriteSteps | PromptKind::RewriteDirect => {
                let content = prompt_section(prompt, "Content").unwrap_or_default();
                format!(
                    "{OPTIMIZED_MARK} {} In addition, the guide now covers background context, verified figures, and a clearer structure for quick scanning.",
                    content.trim()
                )
            }
            PromptKind::BaselineRewrite => {
                let content = prompt_section(prompt, "Content").unwrap_or_default();
                format!(
                    "{TUNED_MARK} {} Key terms now appear earlier for findability.",
                    content.trim()
                )
            }
            PromptKind::Judge => self.judge(prompt),
            PromptKind::Expand => self.expand(prompt),
            PromptKind::LabelRole => self.label_role(prompt),
            PromptKind::LabelStep => self.label_step(prompt),
            PromptKind::RubricGen => {
                "0: The source is absent from the answer entirely.\n1: The source surfaces once in a marginal position.\n2: The source supports a secondary point only.\n3: The source visibly supports one main point.\n4: The source supports several main points prominently.\n5: The source anchors the answer from its opening sentence.".to_string()
            }
        })
    }

    /// Synthesize a cited answer. Sources whose text starts with the
    /// optimized marker are cited first (and at greater length), tuned ones
    /// next, the rest in id order; one uncited closing sentence follows.
    fn answer(&self, prompt: &str) -> String {
        let query = prompt_section(prompt, "Question").unwrap_or_default();
        let sources = parse_source_blocks(prompt_section(prompt, "Sources").unwrap_or_default());
        let mut ranked: Vec<&(u32, String, String)> = sources.iter().collect();
        ranked.sort_by_key(|(id, _, text)| {
            let priority = if text.starts_with(OPTIMIZED_MARK) {
                0
            } else if text.starts_with(TUNED_MARK) {
                3 // competitive with the best plain source, not dominant
            } else {
                2 + *id as usize
            };
            (priority, *id)
        });

        let mut sentences = Vec::new();
        for (id, _, text) in ranked.iter().take(4) {
            let wc = if text.starts_with(OPTIMIZED_MARK) {
                11
            } else {
                5 + (fnv(&format!("{query}#{id}")) % 5) as usize
            };
            sentences.push(format!("{} [{}].", take_words(text, wc), id));
        }
        sentences.push("Overall the sources agree on the practical essentials.".to_string());
        sentences.join(" ")
    }

    /// Score by where the graded source first appears in the answer:
    /// earlier citation earns more, uncited earns zero; short citing
    /// sentences cost a point and dimensions carry small fixed offsets.
    fn judge(&self, prompt: &str) -> String {
        let excerpts = prompt_section(prompt, "Source excerpts").unwrap_or_default();
        if excerpts.contains("never cited") {
            return "SCORE: 0".to_string();
        }
        let source_id: u32 = excerpts
            .split_once("Source [")
            .and_then(|(_, rest)| rest.split(']').next())
            .and_then(|digits| digits.parse().ok())
            .unwrap_or(0);
        let answer_text = prompt_section(prompt, "Answer").unwrap_or_default();
        let Ok(answer) = parse_answer(answer_text, 9) else {
            return "SCORE: 0".to_string();
        };
        let Some(position) = answer.first_citation(source_id) else {
            return "SCORE: 0".to_string();
        };
        let citing_words = answer.sentences[position - 1].text.split_whitespace().count();
        let brevity: i64 = if citing_words < 10 { -1 } else { 0 };
        let base = (6i64 - position as i64).clamp(1, 5);
        let offset: i64 = match dimension_of(prompt).as_deref() {
            Some("influence") | Some("diversity") | Some("click likelihood") => -1,
            Some("subjective volume") => -2,
            _ => 0,
        };
        format!("SCORE: {}", (base + brevity + offset).clamp(0, 5))
    }

    fn expand(&self, prompt: &str) -> String {
        let query = prompt_section(prompt, "Query").unwrap_or("the topic");
        let n: usize = prompt
            .trim_start()
            .strip_prefix("Generate ")
            .and_then(|rest| rest.split_whitespace().next())
            .and_then(|w| w.parse().ok())
            .unwrap_or(4);
        let patterns = [
            format!("{query} guide"),
            format!("{query} explained"),
            format!("how to approach {query}"),
            format!("{query} essentials"),
            format!("{query} overview"),
            format!("key facts about {query}"),
            format!("{query} for beginners"),
            format!("common questions about {query}"),
        ];
        (0..n)
            .map(|i| {
                let base = &patterns[i % patterns.len()];
                if i < patterns.len() {
                    format!("{}. {base}", i + 1)
                } else {
                    format!("{}. {base} part {}", i + 1, i / patterns.len() + 1)
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn label_role(&self, prompt: &str) -> String {
        let role = prompt_section(prompt, "Role").unwrap_or_default().to_lowercase();
        let categories: Vec<&str> = prompt_section(prompt, "Categories")
            .unwrap_or_default()
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        let keyword_sets: [(&[&str], &str); 5] = [
            (&["educator", "teacher", "professor", "researcher", "policy", "academic", "journalist", "student"], "Knowledge Producers and Researchers"),
            (&["hobbyist", "cook", "diy", "parent", "consumer", "homeowner", "enthusiast", "traveler"], "Civic Everyday Actors"),
            (&["analyst", "business", "investor", "market", "entrepreneur", "manager", "retailer"], "Economic Activity Participants"),
            (&["patient", "caregiver", "doctor", "nurse", "clinician", "health"], "Health and Care Stakeholders"),
            (&["artist", "designer", "writer", "musician", "filmmaker", "creative"], "Cultural and Creative Professionals"),
        ];
        for (keywords, category) in keyword_sets {
            if keywords.iter().any(|k| role.contains(k)) && categories.contains(&category) {
                return category.to_string();
            }
        }
        categories.last().copied().unwrap_or("Uncategorized").to_string()
    }

    fn label_step(&self, prompt: &str) -> String {
        let step = prompt_section(prompt, "Step").unwrap_or_default().to_lowercase();
        let objective = if step.contains("complet") {
            "content completeness"
        } else if step.contains("credib") || step.contains("fact") {
            "factual credibility"
        } else if step.contains("clarit") || step.contains("clear") {
            "clarity"
        } else {
            "other"
        };
        let action = if step.contains("enrich") || step.contains("add") || step.contains("incorporat") {
            "content enrichment and expansion"
        } else if step.contains("restructur") || step.contains("reorder") {
            "content restructuring"
        } else if step.contains("elaborat") {
            "elaboration"
        } else if step.contains("redundan") || step.contains("cut") || step.contains("trim") {
            "redundancy reduction"
        } else {
            "other"
        };
        format!("OBJECTIVE_CATEGORY: {objective}\nACTION_CATEGORY: {action}")
    }
}

impl Default for StubModel {
    fn default() -> Self {
        StubModel::new()
    }
}

impl Backend for StubModel {
    fn complete(&self, request: &ChatRequest, _digest: &str) -> Result<BackendReply> {
        // re-asks append correction turns; the stub answers for the first
        // user message, so retried requests resolve the same way
        let prompt = &request.messages[0].text;
        Ok(BackendReply {
            text: self.respond(prompt)?,
            usage: None,
        })
    }

    fn name(&self) -> &'static str {
        "stub-model"
    }
}

fn dimension_of(prompt: &str) -> Option<String> {
    let rest = prompt.lines().find_map(|l| l.strip_prefix("Dimension: "))?;
    let name = rest.split(" - ").next().unwrap_or(rest);
    Some(name.trim().to_string())
}

/// `(id, title, text)` triples from an answer prompt's sources block.
fn parse_source_blocks(section: &str) -> Vec<(u32, String, String)> {
    let mut blocks = Vec::new();
    let mut current: Option<(u32, String, Vec<String>)> = None;
    for line in section.lines() {
        let trimmed = line.trim();
        let header = trimmed
            .strip_prefix('[')
            .and_then(|rest| rest.split_once(']'))
            .and_then(|(digits, title)| digits.parse::<u32>().ok().map(|id| (id, title.trim().to_string())));
        match header {
            Some((id, title)) => {
                if let Some((pid, ptitle, lines)) = current.take() {
                    blocks.push((pid, ptitle, lines.join(" ")));
                }
                current = Some((id, title, Vec::new()));
            }
            None => {
                if let Some((_, _, lines)) = current.as_mut() {
                    if !trimmed.is_empty() {
                        lines.push(trimmed.to_string());
                    }
                }
            }
        }
    }
    if let Some((pid, ptitle, lines)) = current.take() {
        blocks.push((pid, ptitle, lines.join(" ")));
    }
    blocks
}

// ---------------------------------------------------------------------------
// instrumentation

/// Wraps a backend to observe traffic: classified prompt kinds in call
/// order, total calls, and the peak number of concurrent calls. An optional
/// artificial delay widens the window in which overlap can be observed.
pub struct InstrumentedBackend {
    inner: Box<dyn Backend>,
    log: Mutex<Vec<(Option<PromptKind>, String)>>,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
    delay: Option<Duration>,
}

impl InstrumentedBackend {
    pub fn new(inner: Box<dyn Backend>) -> Self {
        InstrumentedBackend {
            inner,
            log: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
            delay: None,
        }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn calls(&self) -> usize {
        self.log.lock().expect("log lock").len()
    }

    pub fn kinds(&self) -> Vec<Option<PromptKind>> {
        self.log.lock().expect("log lock").iter().map(|(k, _)| *k).collect()
    }

    pub fn prompts(&self) -> Vec<String> {
        self.log.lock().expect("log lock").iter().map(|(_, p)| p.clone()).collect()
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }
}

impl Backend for InstrumentedBackend {
    fn complete(&self, request: &ChatRequest, digest: &str) -> Result<BackendReply> {
        let prompt = request.prompt_text();
        let kind = classify_prompt(&request.messages[0].text);
        self.log.lock().expect("log lock").push((kind, prompt));

        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        if let Some(delay) = self.delay {
            std::thread::sleep(delay);
        }
        let result = self.inner.complete(request, digest);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }

    fn name(&self) -> &'static str {
        "instrumented"
    }
}

/// Replays a fixed response sequence, ignoring request content. Exercises
/// retry and re-ask paths where consecutive requests differ.
pub struct SequenceBackend {
    responses: Mutex<VecDeque<String>>,
}

impl SequenceBackend {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        SequenceBackend {
            responses: Mutex::new(responses.into_iter().map(Into::into).collect()),
        }
    }

    pub fn remaining(&self) -> usize {
        self.responses.lock().expect("queue lock").len()
    }
}

impl Backend for SequenceBackend {
    fn complete(&self, _request: &ChatRequest, digest: &str) -> Result<BackendReply> {
        let mut queue = self.responses.lock().expect("queue lock");
        match queue.pop_front() {
            Some(text) => Ok(BackendReply { text, usage: None }),
            None => Err(Error::ScriptedMiss {
                digest: digest.to_string(),
            }),
        }
    }

    fn name(&self) -> &'static str {
        "sequence"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::templates::TemplateSet;

    #[test]
    fn every_stub_marker_matches_its_template() {
        let set = TemplateSet::embedded();
        let cases = [
            ("stages/answer", PromptKind::Answer),
            ("stages/summarize", PromptKind::Summarize),
            ("stages/intent", PromptKind::Intent),
            ("stages/who", PromptKind::Who),
            ("stages/what", PromptKind::What),
            ("stages/why", PromptKind::Why),
            ("stages/how", PromptKind::How),
            ("stages/plan", PromptKind::Plan),
            ("stages/plan_direct", PromptKind::Plan),
            ("stages/rewrite", PromptKind::Rewrite),
            ("stages/rewrite_steps", PromptKind::RewriteSteps),
            ("stages/rewrite_direct", PromptKind::RewriteDirect),
            ("stages/expand", PromptKind::Expand),
            ("stages/label_role", PromptKind::LabelRole),
            ("stages/label_step", PromptKind::LabelStep),
            ("stages/rubric_gen", PromptKind::RubricGen),
            ("rubrics/relevance", PromptKind::Judge),
            ("rubrics/subjective_volume", PromptKind::Judge),
            ("strategies/traditional_seo", PromptKind::BaselineRewrite),
            ("strategies/statistics_addition", PromptKind::BaselineRewrite),
        ];
        for (key, expected) in cases {
            let template = set.get(key).unwrap();
            assert_eq!(
                classify_prompt(template),
                Some(expected),
                "template {key} no longer matches its stub marker"
            );
        }
    }

    #[test]
    fn section_extraction() {
        let prompt = "Header text.\n\n### Question\nwhat is this\n\n### Sources\n[1] T\nbody";
        assert_eq!(prompt_section(prompt, "Question"), Some("what is this"));
        assert_eq!(prompt_section(prompt, "Sources"), Some("[1] T\nbody"));
        assert_eq!(prompt_section(prompt, "Missing"), None);
    }

    #[test]
    fn stub_answer_prefers_optimized_source() {
        let prompt = "You are a generative search engine. ...\n\n### Question\npick panels\n\n### Sources\n[1] A\nplain text about panels here\n\n[2] B\nOptimized: rewritten text about panels with much more detail\n\n[3] C\nmore plain text";
        let stub = StubModel::new();
        let answer = stub.respond(prompt).unwrap();
        let parsed = parse_answer(&answer, 3).unwrap();
        assert_eq!(parsed.first_citation(2), Some(1), "optimized source must lead: {answer}");
        // deterministic
        assert_eq!(answer, stub.respond(prompt).unwrap());
    }

    #[test]
    fn stub_judge_scores_uncited_zero() {
        let prompt = "You are grading one source's visibility inside a generated answer.\nDimension: relevance \u{2014} how directly.\n\n### Question\nq\n\n### Answer\nSome answer [1].\n\n### Source excerpts\nSource [2] T\n(this source is never cited in the answer)\n\nReply";
        assert_eq!(StubModel::new().respond(prompt).unwrap(), "SCORE: 0");
    }

    #[test]
    fn sequence_backend_pops_in_order() {
        let backend = SequenceBackend::new(["a", "b"]);
        let req = ChatRequest::single_user("m", crate::gateway::GenParams::generation(), "x");
        assert_eq!(backend.complete(&req, "d").unwrap().text, "a");
        assert_eq!(backend.complete(&req, "d").unwrap().text, "b");
        assert!(backend.complete(&req, "d").is_err());
    }
}
