//! Visibility scoring: objective position-adjusted word counts, the
//! seven-dimension 0-5 judge rubric, and normalized improvements.
//!
//! Objective scores for source `i` over an answer of `m` sentences, where
//! `wc(s)` is the whitespace token count of sentence `s` (markers already
//! stripped), `cite(s)` its citation set, `decay(s) = e^(-(s-1)/m)` and
//! `share(s) = wc(s)/|cite(s)|`:
//!
//! - word_count     = sum of share(s) over sentences citing i
//! - position_count = sum of decay(s) over sentences citing i
//! - pawc_overall   = sum of share(s) * decay(s) over sentences citing i
//!
//! The share split keeps words conserved across co-cited sources; the decay
//! weights earlier citations higher. Both follow the qualitative definition
//! the benchmark inherits ("earlier and more frequently"); the exact
//! formulas are this crate's pinned definition and live only here, so an
//! alternative can be swapped in for fidelity studies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::ContentSource;
use crate::error::{Error, Result};
use crate::gateway::{ChatRequest, Gateway, GenParams};
use crate::gse::GeneratedAnswer;
use crate::templates::TemplateSet;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveScores {
    pub word_count: f64,
    pub position_count: f64,
    pub pawc_overall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectiveDimension {
    Relevance,
    Influence,
    Uniqueness,
    Diversity,
    ClickLikelihood,
    SubjectivePosition,
    SubjectiveVolume,
}

impl SubjectiveDimension {
    pub const ALL: [SubjectiveDimension; 7] = [
        SubjectiveDimension::Relevance,
        SubjectiveDimension::Influence,
        SubjectiveDimension::Uniqueness,
        SubjectiveDimension::Diversity,
        SubjectiveDimension::ClickLikelihood,
        SubjectiveDimension::SubjectivePosition,
        SubjectiveDimension::SubjectiveVolume,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SubjectiveDimension::Relevance => "relevance",
            SubjectiveDimension::Influence => "influence",
            SubjectiveDimension::Uniqueness => "uniqueness",
            SubjectiveDimension::Diversity => "diversity",
            SubjectiveDimension::ClickLikelihood => "click_likelihood",
            SubjectiveDimension::SubjectivePosition => "subjective_position",
            SubjectiveDimension::SubjectiveVolume => "subjective_volume",
        }
    }

    /// One-line definition, used when regenerating rubric templates.
    pub fn description(&self) -> &'static str {
        match self {
            SubjectiveDimension::Relevance => {
                "how directly the material cited from this source addresses the question asked"
            }
            SubjectiveDimension::Influence => {
                "how much this source shapes the answer's overall claims and conclusions"
            }
            SubjectiveDimension::Uniqueness => {
                "whether this source contributes information no other source in the answer provides"
            }
            SubjectiveDimension::Diversity => {
                "the breadth of distinct aspects of the answer this source contributes to"
            }
            SubjectiveDimension::ClickLikelihood => {
                "how likely a reader of the answer is to follow the citation to this source"
            }
            SubjectiveDimension::SubjectivePosition => {
                "how early and prominently this source's citations appear to a reader scanning the answer"
            }
            SubjectiveDimension::SubjectiveVolume => {
                "how much of the answer reads as drawn from this source"
            }
        }
    }

    fn rubric_key(&self) -> String {
        format!("rubrics/{}", self.name())
    }
}

/// All seven dimension scores, each an integer in 0..=5.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectiveScores(BTreeMap<SubjectiveDimension, u8>);

impl SubjectiveScores {
    pub fn from_scores(scores: BTreeMap<SubjectiveDimension, u8>) -> Result<Self> {
        for dimension in SubjectiveDimension::ALL {
            match scores.get(&dimension) {
                None => {
                    return Err(Error::InvalidInput {
                        reason: format!("missing subjective dimension {}", dimension.name()),
                    })
                }
                Some(&score) if score > 5 => {
                    return Err(Error::ScoreOutOfRange {
                        score: score as i64,
                    })
                }
                Some(_) => {}
            }
        }
        Ok(SubjectiveScores(scores))
    }

    pub fn zeros() -> Self {
        SubjectiveScores(SubjectiveDimension::ALL.iter().map(|&d| (d, 0)).collect())
    }

    pub fn uniform(score: u8) -> Result<Self> {
        Self::from_scores(SubjectiveDimension::ALL.iter().map(|&d| (d, score)).collect())
    }

    pub fn get(&self, dimension: SubjectiveDimension) -> u8 {
        self.0[&dimension]
    }

    pub fn iter(&self) -> impl Iterator<Item = (SubjectiveDimension, u8)> + '_ {
        self.0.iter().map(|(&d, &s)| (d, s))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Normalized before/after delta for one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRecord {
    pub metric_name: String,
    pub before: f64,
    pub after: f64,
    pub improvement_pct: f64,
}

// ---------------------------------------------------------------------------
// objective scoring

pub fn objective_scores(answer: &GeneratedAnswer, source_id: u32) -> Result<ObjectiveScores> {
    if source_id < 1 || source_id as usize > answer.source_count {
        return Err(Error::SourceIdOutOfRange {
            id: source_id,
            count: answer.source_count,
        });
    }
    let m = answer.sentences.len();
    if m == 0 {
        return Ok(ObjectiveScores::default());
    }
    let mut scores = ObjectiveScores::default();
    for sentence in &answer.sentences {
        if !sentence.citation_ids.contains(&source_id) {
            continue;
        }
        let wc = sentence.text.split_whitespace().count() as f64;
        let share = wc / sentence.citation_ids.len() as f64;
        let decay = (-((sentence.order_index as f64) - 1.0) / m as f64).exp();
        scores.word_count += share;
        scores.position_count += decay;
        scores.pawc_overall += share * decay;
    }
    Ok(scores)
}

// ---------------------------------------------------------------------------
// improvement

/// The normalized improvement: `(after - before) / (before + 1) * 100`.
pub fn improvement(before: f64, after: f64) -> Result<f64> {
    if before < 0.0 || !before.is_finite() {
        return Err(Error::NegativeInput {
            name: "before".into(),
            value: before,
        });
    }
    if after < 0.0 || !after.is_finite() {
        return Err(Error::NegativeInput {
            name: "after".into(),
            value: after,
        });
    }
    Ok((after - before) / (before + 1.0) * 100.0)
}

pub const OBJECTIVE_METRICS: [&str; 3] = ["word_count", "position_count", "pawc_overall"];
pub const OBJECTIVE_OVERALL: &str = "objective_overall";
pub const SUBJECTIVE_AVERAGE: &str = "subjective_average";

/// Canonical report order: three objective metrics, seven subjective
/// dimensions, then the two aggregates.
pub fn metric_names() -> Vec<&'static str> {
    let mut names: Vec<&'static str> = OBJECTIVE_METRICS.to_vec();
    names.extend(SubjectiveDimension::ALL.iter().map(|d| d.name()));
    names.push(OBJECTIVE_OVERALL);
    names.push(SUBJECTIVE_AVERAGE);
    names
}

/// Per-metric improvement records for one task: ten metrics plus two
/// aggregates. `objective_overall` repeats the pawc_overall improvement;
/// `subjective_average` is the arithmetic mean of the seven subjective
/// improvement percentages (its pct is that mean, not the formula applied
/// to the mean scores).
pub fn improvement_report(
    before: &(ObjectiveScores, SubjectiveScores),
    after: &(ObjectiveScores, SubjectiveScores),
) -> Result<Vec<ImprovementRecord>> {
    let mut records = Vec::with_capacity(12);
    let objective_pairs = [
        ("word_count", before.0.word_count, after.0.word_count),
        ("position_count", before.0.position_count, after.0.position_count),
        ("pawc_overall", before.0.pawc_overall, after.0.pawc_overall),
    ];
    for (name, b, a) in objective_pairs {
        records.push(ImprovementRecord {
            metric_name: name.into(),
            before: b,
            after: a,
            improvement_pct: improvement(b, a)?,
        });
    }

    let mut subjective_pcts = Vec::with_capacity(7);
    let mut subjective_before_sum = 0.0;
    let mut subjective_after_sum = 0.0;
    for dimension in SubjectiveDimension::ALL {
        let b = before.1.get(dimension) as f64;
        let a = after.1.get(dimension) as f64;
        let pct = improvement(b, a)?;
        subjective_pcts.push(pct);
        subjective_before_sum += b;
        subjective_after_sum += a;
        records.push(ImprovementRecord {
            metric_name: dimension.name().into(),
            before: b,
            after: a,
            improvement_pct: pct,
        });
    }

    records.push(ImprovementRecord {
        metric_name: OBJECTIVE_OVERALL.into(),
        before: before.0.pawc_overall,
        after: after.0.pawc_overall,
        improvement_pct: improvement(before.0.pawc_overall, after.0.pawc_overall)?,
    });
    records.push(ImprovementRecord {
        metric_name: SUBJECTIVE_AVERAGE.into(),
        before: subjective_before_sum / 7.0,
        after: subjective_after_sum / 7.0,
        improvement_pct: subjective_pcts.iter().sum::<f64>() / 7.0,
    });
    Ok(records)
}

// ---------------------------------------------------------------------------
// judging

/// Rubric-based subjective scoring against a configured gateway. Judge
/// calls default to temperature 0.
pub struct Judge<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateSet,
    pub model_id: String,
    pub params: GenParams,
}

impl Judge<'_> {
    /// Score one dimension. The rubric sees the query, the full answer, and
    /// the sentences citing this source. A reply without a parseable
    /// `SCORE:` line earns one re-ask; an out-of-range integer is an error.
    pub fn judge_dimension(
        &self,
        answer: &GeneratedAnswer,
        source: &ContentSource,
        dimension: SubjectiveDimension,
        query: &str,
    ) -> Result<u8> {
        let excerpts = source_excerpts(answer, source);
        let prompt = self.templates.render(
            &dimension.rubric_key(),
            &[
                ("query", query),
                ("answer", answer.raw_text.trim()),
                ("source_excerpts", &excerpts),
            ],
        )?;
        let request = ChatRequest::single_user(&self.model_id, self.params, prompt);
        let response = self.gateway.complete(&request)?;
        match parse_score(&response.text) {
            Some(score) => check_range(score),
            None => {
                let retry = request.with_followup(
                    response.text,
                    "Reply with a single line: \"SCORE: <integer 0-5>\".",
                );
                let second = self.gateway.complete(&retry)?;
                match parse_score(&second.text) {
                    Some(score) => check_range(score),
                    None => Err(Error::ScoreParseError { raw: second.text }),
                }
            }
        }
    }

    /// All seven dimensions. An answer with zero sentences scores zero
    /// everywhere without any judge calls; a missing dimension is an error,
    /// never a default.
    pub fn subjective_scores(
        &self,
        answer: &GeneratedAnswer,
        source: &ContentSource,
        query: &str,
    ) -> Result<SubjectiveScores> {
        if answer.sentences.is_empty() {
            return Ok(SubjectiveScores::zeros());
        }
        let mut scores = BTreeMap::new();
        for dimension in SubjectiveDimension::ALL {
            let score = self
                .judge_dimension(answer, source, dimension, query)
                .map_err(|e| e.in_stage(format!("judge:{}", dimension.name())))?;
            scores.insert(dimension, score);
        }
        SubjectiveScores::from_scores(scores)
    }
}

fn check_range(score: i64) -> Result<u8> {
    if (0..=5).contains(&score) {
        Ok(score as u8)
    } else {
        Err(Error::ScoreOutOfRange { score })
    }
}

fn parse_score(text: &str) -> Option<i64> {
    for line in text.lines() {
        if let Some(rest) = line.trim().strip_prefix("SCORE:") {
            return rest.trim().parse::<i64>().ok();
        }
    }
    None
}

/// What the judge sees about the graded source: its id, title, and the
/// answer sentences citing it.
fn source_excerpts(answer: &GeneratedAnswer, source: &ContentSource) -> String {
    let cited: Vec<String> = answer
        .sentences
        .iter()
        .filter(|s| s.citation_ids.contains(&source.source_id))
        .map(|s| format!("- {}", s.text))
        .collect();
    if cited.is_empty() {
        format!(
            "Source [{}] {}\n(this source is never cited in the answer)",
            source.source_id, source.title
        )
    } else {
        format!(
            "Source [{}] {}\nSentences citing this source:\n{}",
            source.source_id,
            source.title,
            cited.join("\n")
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gse::parse_answer;

    fn two_sentence_answer() -> GeneratedAnswer {
        // l1: 6 words citing {1}; l2: 4 words citing {1,2}
        parse_answer(
            "Solar panels cut household bills fast [1]. Batteries store the surplus [1][2].",
            5,
        )
        .unwrap()
    }

    #[test]
    fn worked_example_source_one() {
        let scores = objective_scores(&two_sentence_answer(), 1).unwrap();
        let decay2 = (-0.5f64).exp();
        assert!((scores.word_count - 8.0).abs() < 1e-9);
        assert!((scores.position_count - (1.0 + decay2)).abs() < 1e-9);
        assert!((scores.pawc_overall - (6.0 + 2.0 * decay2)).abs() < 1e-9);
        // spot values quoted to 4 decimals
        assert!((scores.position_count - 1.6065).abs() < 1e-4);
        assert!((scores.pawc_overall - 7.2131).abs() < 1e-4);
    }

    #[test]
    fn worked_example_source_two() {
        let scores = objective_scores(&two_sentence_answer(), 2).unwrap();
        let decay2 = (-0.5f64).exp();
        assert!((scores.word_count - 2.0).abs() < 1e-9);
        assert!((scores.position_count - decay2).abs() < 1e-9);
        assert!((scores.pawc_overall - 2.0 * decay2).abs() < 1e-9);
        assert!((scores.pawc_overall - 1.2131).abs() < 1e-4);
    }

    #[test]
    fn uncited_source_scores_zero() {
        let scores = objective_scores(&two_sentence_answer(), 5).unwrap();
        assert_eq!(scores, ObjectiveScores::default());
    }

    #[test]
    fn out_of_range_source_id_is_rejected() {
        let err = objective_scores(&two_sentence_answer(), 6).unwrap_err();
        assert_eq!(err.code(), "source-id-out-of-range");
        let err = objective_scores(&two_sentence_answer(), 0).unwrap_err();
        assert_eq!(err.code(), "source-id-out-of-range");
    }

    #[test]
    fn improvement_spot_values() {
        assert_eq!(improvement(2.0, 5.0).unwrap(), 100.0);
        assert_eq!(improvement(3.7, 3.7).unwrap(), 0.0);
        assert!((improvement(0.0, 7.2131).unwrap() - 721.31).abs() < 1e-9);
        assert!(improvement(-1.0, 2.0).is_err());
        assert!(improvement(1.0, -2.0).is_err());
    }

    #[test]
    fn improvement_report_has_twelve_records() {
        let before = (
            ObjectiveScores {
                word_count: 8.0,
                position_count: 1.6065,
                pawc_overall: 7.2131,
            },
            SubjectiveScores::uniform(2).unwrap(),
        );
        let after = (
            ObjectiveScores {
                word_count: 10.0,
                position_count: 2.0,
                pawc_overall: 9.0,
            },
            SubjectiveScores::uniform(5).unwrap(),
        );
        let records = improvement_report(&before, &after).unwrap();
        assert_eq!(records.len(), 12);
        let names: Vec<&str> = records.iter().map(|r| r.metric_name.as_str()).collect();
        assert_eq!(names, metric_names());

        let overall = records.iter().find(|r| r.metric_name == OBJECTIVE_OVERALL).unwrap();
        assert!((overall.improvement_pct - (9.0 - 7.2131) / 8.2131 * 100.0).abs() < 1e-9);
        assert!((overall.improvement_pct - 21.76).abs() < 0.005);

        let average = records.iter().find(|r| r.metric_name == SUBJECTIVE_AVERAGE).unwrap();
        assert_eq!(average.improvement_pct, 100.0);
    }

    #[test]
    fn identical_scores_report_all_zero() {
        let pair = (
            ObjectiveScores {
                word_count: 3.0,
                position_count: 1.0,
                pawc_overall: 2.5,
            },
            SubjectiveScores::uniform(3).unwrap(),
        );
        for record in improvement_report(&pair, &pair.clone()).unwrap() {
            assert_eq!(record.improvement_pct, 0.0, "{}", record.metric_name);
        }
    }

    #[test]
    fn subjective_scores_require_all_dimensions() {
        let mut partial = BTreeMap::new();
        partial.insert(SubjectiveDimension::Relevance, 4u8);
        assert!(SubjectiveScores::from_scores(partial).is_err());
        assert_eq!(SubjectiveScores::zeros().len(), 7);
    }

    #[test]
    fn parse_score_line_forms() {
        assert_eq!(parse_score("SCORE: 4"), Some(4));
        assert_eq!(parse_score("reasoning...\nSCORE: 0\n"), Some(0));
        assert_eq!(parse_score("SCORE:5"), Some(5));
        assert_eq!(parse_score("score is four"), None);
        assert_eq!(parse_score("SCORE: seven"), None);
    }
}
