//! Simulated generative search engine: builds the answer-generation prompt
//! over a sample's sources, invokes the generator model, and parses the
//! cited response into structured sentences.
//!
//! Citation grammar: markers are `[k]` with `k` a positive integer, attached
//! to the sentence whose terminal punctuation they precede or follow;
//! consecutive markers are allowed. Sentence segmentation splits on `.`,
//! `!`, `?` followed by whitespace or end of input, guarded by a short
//! abbreviation list, and never splits inside a bracketed marker.
//! Segmentation only needs to be consistent between before/after answers,
//! since the metrics compare improvements; sentences with zero citations are
//! kept — real model output produces them and they still count toward
//! sentence positions.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::ContentSource;
use crate::error::{Error, Result};
use crate::gateway::{ChatRequest, Gateway, GenParams};
use crate::templates::TemplateSet;

/// Sources are enumerated with single-digit markers, which keeps the
/// citation grammar unambiguous; every bench sample holds five.
pub const MAX_SOURCES: usize = 9;

const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "etc.", "vs.", "cf.", "Dr.", "Mr.", "Mrs.", "Ms.", "Prof.", "St.", "No.",
    "Fig.", "U.S.", "U.K.", "a.m.", "p.m.",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSentence {
    /// 1-based position within the answer.
    pub order_index: usize,
    /// Sentence text with citation markers stripped.
    pub text: String,
    pub citation_ids: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedAnswer {
    pub raw_text: String,
    pub sentences: Vec<AnswerSentence>,
    pub source_count: usize,
    pub query: String,
}

impl GeneratedAnswer {
    pub fn sentence_count(&self) -> usize {
        self.sentences.len()
    }

    /// 1-based index of the first sentence citing `source_id`, if any.
    pub fn first_citation(&self, source_id: u32) -> Option<usize> {
        self.sentences
            .iter()
            .find(|s| s.citation_ids.contains(&source_id))
            .map(|s| s.order_index)
    }
}

/// Answer generation against a configured gateway.
pub struct Simulator<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateSet,
    pub model_id: String,
    pub params: GenParams,
}

impl Simulator<'_> {
    /// Render the single-turn answer prompt: sources enumerated as
    /// `[i] title` + text, query embedded verbatim.
    pub fn build_answer_prompt(&self, query: &str, sources: &[ContentSource]) -> Result<ChatRequest> {
        if sources.is_empty() {
            return Err(Error::InvalidInput {
                reason: "answer prompt needs at least one source".into(),
            });
        }
        if sources.len() > MAX_SOURCES {
            return Err(Error::TooManySources {
                count: sources.len(),
            });
        }
        let blocks: Vec<String> = sources
            .iter()
            .map(|s| format!("[{}] {}\n{}", s.source_id, s.title, s.text))
            .collect();
        let prompt = self.templates.render(
            "stages/answer",
            &[("query", query), ("sources", &blocks.join("\n\n"))],
        )?;
        Ok(ChatRequest::single_user(&self.model_id, self.params, prompt))
    }

    /// Prompt, complete, parse. The raw model text is retained on the
    /// returned answer for auditing.
    pub fn generate_response(&self, query: &str, sources: &[ContentSource]) -> Result<GeneratedAnswer> {
        let request = self.build_answer_prompt(query, sources)?;
        let response = self.gateway.complete(&request)?;
        let mut answer = parse_answer(&response.text, sources.len())?;
        answer.query = query.to_string();
        Ok(answer)
    }
}

// ---------------------------------------------------------------------------
// parsing

/// Split raw model output into cited sentences. `query` on the result is
/// left empty; `generate_response` fills it.
pub fn parse_answer(raw: &str, source_count: usize) -> Result<GeneratedAnswer> {
    assert!(source_count >= 1, "source_count must be at least 1");
    let mut sentences = Vec::new();
    for chunk in segment(raw) {
        let (text, citations) = strip_markers(&chunk);
        if text.is_empty() {
            // marker-only fragment with no sentence to attach to
            continue;
        }
        let order_index = sentences.len() + 1;
        for &id in &citations {
            if id < 1 || id as usize > source_count {
                return Err(Error::CitationOutOfRange {
                    id,
                    sentence: order_index,
                    count: source_count,
                });
            }
        }
        sentences.push(AnswerSentence {
            order_index,
            text,
            citation_ids: citations,
        });
    }
    Ok(GeneratedAnswer {
        raw_text: raw.to_string(),
        sentences,
        source_count,
        query: String::new(),
    })
}

/// Render an answer structure back into marker text: citations inserted
/// before each sentence's terminal punctuation. Inverse of `parse_answer`
/// for well-formed sentences; used by the round-trip property tests and the
/// offline response stub.
pub fn render_answer(sentences: &[AnswerSentence]) -> String {
    let mut parts = Vec::new();
    for sentence in sentences {
        let markers: String = sentence
            .citation_ids
            .iter()
            .map(|id| format!("[{id}]"))
            .collect();
        let text = sentence.text.trim();
        let rendered = match text.chars().last() {
            Some(last) if matches!(last, '.' | '!' | '?') && !markers.is_empty() => {
                let body = &text[..text.len() - last.len_utf8()];
                format!("{body} {markers}{last}")
            }
            _ if markers.is_empty() => text.to_string(),
            _ => format!("{text} {markers}"),
        };
        parts.push(rendered);
    }
    parts.join(" ")
}

/// Sentence chunks of `raw`, each carrying its citation markers.
fn segment(raw: &str) -> Vec<String> {
    let chars: Vec<char> = raw.chars().collect();
    let mut chunks = Vec::new();
    let mut start = 0;
    let mut i = 0;

    while i < chars.len() {
        let c = chars[i];
        if c == '[' {
            // skip over a digit-marker so its contents never split
            let mut j = i + 1;
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            if j > i + 1 && j < chars.len() && chars[j] == ']' {
                i = j + 1;
                continue;
            }
        }
        if matches!(c, '.' | '!' | '?') {
            let followed_ok = match chars.get(i + 1) {
                None => true,
                Some(next) => next.is_whitespace(),
            };
            if followed_ok && !(c == '.' && ends_with_abbreviation(&chars[start..=i])) {
                // consume trailing whitespace and any citation markers that
                // follow the terminal; they belong to this sentence
                let mut end = i + 1;
                loop {
                    let mut k = end;
                    while k < chars.len() && chars[k].is_whitespace() {
                        k += 1;
                    }
                    match marker_end(&chars, k) {
                        Some(after) => end = after,
                        None => break,
                    }
                }
                chunks.push(chars[start..end].iter().collect());
                while end < chars.len() && chars[end].is_whitespace() {
                    end += 1;
                }
                start = end;
                i = end;
                continue;
            }
        }
        i += 1;
    }
    if start < chars.len() {
        let tail: String = chars[start..].iter().collect();
        if !tail.trim().is_empty() {
            chunks.push(tail);
        }
    }
    chunks
}

/// If `chars[at..]` starts a `[digits]` marker, the index just past it.
fn marker_end(chars: &[char], at: usize) -> Option<usize> {
    if chars.get(at) != Some(&'[') {
        return None;
    }
    let mut j = at + 1;
    while j < chars.len() && chars[j].is_ascii_digit() {
        j += 1;
    }
    (j > at + 1 && chars.get(j) == Some(&']')).then_some(j + 1)
}

fn ends_with_abbreviation(chars: &[char]) -> bool {
    // last whitespace-delimited token, including the terminal dot
    let token: String = chars
        .iter()
        .rev()
        .take_while(|c| !c.is_whitespace())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    // ignore leading punctuation like an opening parenthesis or quote
    let cleaned = token.trim_start_matches(|c: char| !c.is_alphanumeric());
    ABBREVIATIONS.iter().any(|abbr| *abbr == cleaned)
}

/// Remove `[k]` markers from a chunk, returning normalized sentence text and
/// the collected citation ids. Whitespace left behind by marker removal is
/// collapsed so `"bills [1]."` becomes `"bills."`.
fn strip_markers(chunk: &str) -> (String, BTreeSet<u32>) {
    let chars: Vec<char> = chunk.chars().collect();
    let mut citations = BTreeSet::new();
    let mut kept = String::new();
    let mut i = 0;
    while i < chars.len() {
        if let Some(end) = marker_end(&chars, i) {
            let digits: String = chars[i + 1..end - 1].iter().collect();
            if let Ok(id) = digits.parse::<u32>() {
                citations.insert(id);
            }
            // drop whitespace that only existed to set off the marker
            while kept.ends_with(' ') {
                kept.pop();
            }
            i = end;
            continue;
        }
        kept.push(chars[i]);
        i += 1;
    }
    let text = kept.split_whitespace().collect::<Vec<_>>().join(" ");
    (text, citations)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source(id: u32, title: &str, text: &str) -> ContentSource {
        ContentSource {
            source_id: id,
            title: title.into(),
            text: text.into(),
            origin_tag: None,
        }
    }

    #[test]
    fn parses_two_sentences_with_citations() {
        let answer = parse_answer("Solar cuts bills [1]. Batteries store surplus [2][4].", 5).unwrap();
        assert_eq!(answer.sentence_count(), 2);
        assert_eq!(answer.sentences[0].text, "Solar cuts bills.");
        assert_eq!(answer.sentences[0].citation_ids, BTreeSet::from([1]));
        assert_eq!(answer.sentences[1].text, "Batteries store surplus.");
        assert_eq!(answer.sentences[1].citation_ids, BTreeSet::from([2, 4]));
    }

    #[test]
    fn sentence_without_citations_is_kept() {
        let answer = parse_answer("No citations here.", 5).unwrap();
        assert_eq!(answer.sentence_count(), 1);
        assert_eq!(answer.sentences[0].text, "No citations here.");
        assert!(answer.sentences[0].citation_ids.is_empty());
    }

    #[test]
    fn citation_out_of_range_is_reported_with_position() {
        let err = parse_answer("Claim [7].", 5).unwrap_err();
        match err {
            Error::CitationOutOfRange { id, sentence, count } => {
                assert_eq!((id, sentence, count), (7, 1, 5));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn markers_after_terminal_attach_to_previous_sentence() {
        let answer = parse_answer("First claim. [2] Second claim [3].", 5).unwrap();
        assert_eq!(answer.sentences[0].citation_ids, BTreeSet::from([2]));
        assert_eq!(answer.sentences[0].text, "First claim.");
        assert_eq!(answer.sentences[1].citation_ids, BTreeSet::from([3]));
    }

    #[test]
    fn abbreviations_do_not_split() {
        let answer = parse_answer("Compare panels, e.g. monocrystalline ones [1]. Done [2].", 5).unwrap();
        assert_eq!(answer.sentence_count(), 2);
        assert_eq!(answer.sentences[0].text, "Compare panels, e.g. monocrystalline ones.");
    }

    #[test]
    fn empty_input_yields_zero_sentences() {
        let answer = parse_answer("", 5).unwrap();
        assert_eq!(answer.sentence_count(), 0);
        let answer = parse_answer("   \n  ", 5).unwrap();
        assert_eq!(answer.sentence_count(), 0);
    }

    #[test]
    fn order_indices_run_from_one_without_gaps() {
        let answer = parse_answer("A [1]. B! C? D.", 3).unwrap();
        let indices: Vec<usize> = answer.sentences.iter().map(|s| s.order_index).collect();
        assert_eq!(indices, vec![1, 2, 3, 4]);
    }

    #[test]
    fn non_numeric_brackets_are_plain_text() {
        let answer = parse_answer("See [note] for details [2].", 3).unwrap();
        assert_eq!(answer.sentences[0].text, "See [note] for details.");
        assert_eq!(answer.sentences[0].citation_ids, BTreeSet::from([2]));
    }

    #[test]
    fn decimal_numbers_do_not_split() {
        let answer = parse_answer("Efficiency sits at 21.5 percent [1]. Next [2].", 3).unwrap();
        assert_eq!(answer.sentence_count(), 2);
        assert_eq!(answer.sentences[0].text, "Efficiency sits at 21.5 percent.");
    }

    #[test]
    fn trailing_fragment_without_terminal_is_a_sentence() {
        let answer = parse_answer("Done [1]. And a dangling tail [2]", 3).unwrap();
        assert_eq!(answer.sentence_count(), 2);
        assert_eq!(answer.sentences[1].text, "And a dangling tail");
        assert_eq!(answer.sentences[1].citation_ids, BTreeSet::from([2]));
    }

    #[test]
    fn render_parse_roundtrip_simple() {
        let sentences = vec![
            AnswerSentence {
                order_index: 1,
                text: "Solar cuts bills.".into(),
                citation_ids: BTreeSet::from([1]),
            },
            AnswerSentence {
                order_index: 2,
                text: "Batteries store surplus!".into(),
                citation_ids: BTreeSet::from([2, 4]),
            },
            AnswerSentence {
                order_index: 3,
                text: "No citation here.".into(),
                citation_ids: BTreeSet::new(),
            },
        ];
        let rendered = render_answer(&sentences);
        let parsed = parse_answer(&rendered, 5).unwrap();
        assert_eq!(parsed.sentences, sentences);
    }

    #[test]
    fn prompt_contains_all_source_headers_and_query_once() {
        let gateway = Gateway::from_backend(
            Box::new(crate::gateway::ScriptedBackend::from_map(Default::default(), true)),
            1,
        );
        let sim = Simulator {
            gateway: &gateway,
            templates: TemplateSet::embedded(),
            model_id: "m".into(),
            params: GenParams::generation(),
        };
        let sources: Vec<ContentSource> = (1..=5)
            .map(|i| source(i, &format!("Title {i}"), &format!("Body {i}.")))
            .collect();
        let request = sim.build_answer_prompt("pick solar panels", &sources).unwrap();
        let prompt = request.prompt_text();
        for i in 1..=5 {
            assert!(prompt.contains(&format!("[{i}] Title {i}")));
        }
        assert_eq!(prompt.matches("pick solar panels").count(), 1);
    }

    #[test]
    fn prompt_with_single_source() {
        let gateway = Gateway::from_backend(
            Box::new(crate::gateway::ScriptedBackend::from_map(Default::default(), true)),
            1,
        );
        let sim = Simulator {
            gateway: &gateway,
            templates: TemplateSet::embedded(),
            model_id: "m".into(),
            params: GenParams::generation(),
        };
        let request = sim
            .build_answer_prompt("q", &[source(1, "Only", "Text.")])
            .unwrap();
        assert!(request.prompt_text().contains("[1] Only"));
    }

    #[test]
    fn too_many_sources_is_rejected() {
        let gateway = Gateway::from_backend(
            Box::new(crate::gateway::ScriptedBackend::from_map(Default::default(), true)),
            1,
        );
        let sim = Simulator {
            gateway: &gateway,
            templates: TemplateSet::embedded(),
            model_id: "m".into(),
            params: GenParams::generation(),
        };
        let sources: Vec<ContentSource> = (1..=10).map(|i| source(i, "T", "x")).collect();
        let err = sim.build_answer_prompt("q", &sources).unwrap_err();
        assert_eq!(err.code(), "too-many-sources");
    }
}
