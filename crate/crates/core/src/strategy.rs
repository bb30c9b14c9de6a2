//! Content rewrite strategies.
//!
//! Fourteen strategies share one entry point, `Optimizer::apply_strategy`:
//!
//! - nine single-prompt baselines (lexical, expression, and enrichment
//!   rewrites), each driven by its own template file;
//! - the full intent-driven pipeline `raid_gseo`: summarize -> infer intent
//!   -> multi-role reflection -> step planning -> rewriting;
//! - four ablations that keep exact stage subsets: `simple_gseo_*` drop
//!   intent modeling entirely (with or without step planning), `id_gseo_*`
//!   keep the initial intent but drop reflection (with or without the
//!   summary; without it, the raw text stands in for the summary).
//!
//! Every strategy is query-blind: no stage ever sees a user query.

use serde::{Deserialize, Serialize};

use crate::corpus::ContentSource;
use crate::error::{Error, Result};
use crate::gateway::{ChatRequest, Gateway, GenParams};
use crate::reflection::{ReflectionRecord, Reflector};
use crate::templates::TemplateSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyId {
    TraditionalSeo,
    UniqueWords,
    SimpleExpression,
    AuthoritativeExpression,
    FluentExpression,
    TerminologyAddition,
    ReputationAddition,
    QuotationAddition,
    StatisticsAddition,
    RaidGseo,
    SimpleGseoNoStep,
    SimpleGseoWithStep,
    IdGseoNoSummary,
    IdGseoWithSummary,
}

impl StrategyId {
    pub const ALL: [StrategyId; 14] = [
        StrategyId::TraditionalSeo,
        StrategyId::UniqueWords,
        StrategyId::SimpleExpression,
        StrategyId::AuthoritativeExpression,
        StrategyId::FluentExpression,
        StrategyId::TerminologyAddition,
        StrategyId::ReputationAddition,
        StrategyId::QuotationAddition,
        StrategyId::StatisticsAddition,
        StrategyId::RaidGseo,
        StrategyId::SimpleGseoNoStep,
        StrategyId::SimpleGseoWithStep,
        StrategyId::IdGseoNoSummary,
        StrategyId::IdGseoWithSummary,
    ];

    pub const BASELINES: [StrategyId; 9] = [
        StrategyId::TraditionalSeo,
        StrategyId::UniqueWords,
        StrategyId::SimpleExpression,
        StrategyId::AuthoritativeExpression,
        StrategyId::FluentExpression,
        StrategyId::TerminologyAddition,
        StrategyId::ReputationAddition,
        StrategyId::QuotationAddition,
        StrategyId::StatisticsAddition,
    ];

    /// Stable snake_case name used in configs, reports, and trace files.
    pub fn name(&self) -> &'static str {
        match self {
            StrategyId::TraditionalSeo => "traditional_seo",
            StrategyId::UniqueWords => "unique_words",
            StrategyId::SimpleExpression => "simple_expression",
            StrategyId::AuthoritativeExpression => "authoritative_expression",
            StrategyId::FluentExpression => "fluent_expression",
            StrategyId::TerminologyAddition => "terminology_addition",
            StrategyId::ReputationAddition => "reputation_addition",
            StrategyId::QuotationAddition => "quotation_addition",
            StrategyId::StatisticsAddition => "statistics_addition",
            StrategyId::RaidGseo => "raid_gseo",
            StrategyId::SimpleGseoNoStep => "simple_gseo_no_step",
            StrategyId::SimpleGseoWithStep => "simple_gseo_with_step",
            StrategyId::IdGseoNoSummary => "id_gseo_no_summary",
            StrategyId::IdGseoWithSummary => "id_gseo_with_summary",
        }
    }

    pub fn parse(name: &str) -> Result<StrategyId> {
        StrategyId::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::InvalidInput {
                reason: format!("unknown strategy {name:?}"),
            })
    }

    pub fn is_baseline(&self) -> bool {
        Self::BASELINES.contains(self)
    }

    /// Which optional trace stages this strategy populates.
    pub fn stage_set(&self) -> StageSet {
        match self {
            s if s.is_baseline() => StageSet::default(),
            StrategyId::RaidGseo => StageSet {
                summary: true,
                initial_intent: true,
                reflection: true,
                refined_intent: true,
                steps: true,
            },
            StrategyId::SimpleGseoNoStep => StageSet::default(),
            StrategyId::SimpleGseoWithStep => StageSet {
                steps: true,
                ..StageSet::default()
            },
            StrategyId::IdGseoNoSummary => StageSet {
                initial_intent: true,
                steps: true,
                ..StageSet::default()
            },
            StrategyId::IdGseoWithSummary => StageSet {
                summary: true,
                initial_intent: true,
                steps: true,
                ..StageSet::default()
            },
            _ => unreachable!(),
        }
    }
}

impl std::fmt::Display for StrategyId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Presence flags for the optional stages of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageSet {
    pub summary: bool,
    pub initial_intent: bool,
    pub reflection: bool,
    pub refined_intent: bool,
    pub steps: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizationStep {
    /// What to improve.
    pub objective_label: String,
    /// How to improve it.
    pub action_label: String,
    /// Imperative instruction handed to the rewriter.
    pub instruction_text: String,
}

/// Full artifact of one strategy run over one source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub strategy: StrategyId,
    pub summary: Option<String>,
    pub initial_intent: Option<String>,
    pub refined_intent: Option<String>,
    pub reflection: Option<ReflectionRecord>,
    pub steps: Vec<OptimizationStep>,
    pub rewritten_text: String,
    /// Completions made during this run, retries included.
    pub elapsed_calls: u32,
}

impl OptimizationTrace {
    pub fn populated_stage_set(&self) -> StageSet {
        StageSet {
            summary: self.summary.is_some(),
            initial_intent: self.initial_intent.is_some(),
            reflection: self.reflection.is_some(),
            refined_intent: self.refined_intent.is_some(),
            steps: !self.steps.is_empty(),
        }
    }
}

/// Tunable pipeline bounds; defaults keep desk-scale runs cheap.
#[derive(Debug, Clone, Copy)]
pub struct OptimizerLimits {
    pub summary_word_cap: usize,
    pub min_steps: usize,
    pub max_steps: usize,
    pub min_roles: usize,
    pub max_roles: usize,
    pub rewrite_min_ratio: f64,
    pub rewrite_max_ratio: f64,
}

impl Default for OptimizerLimits {
    fn default() -> Self {
        OptimizerLimits {
            summary_word_cap: 120,
            min_steps: 3,
            max_steps: 8,
            min_roles: 3,
            max_roles: 8,
            rewrite_min_ratio: 0.5,
            rewrite_max_ratio: 3.0,
        }
    }
}

pub struct Optimizer<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateSet,
    pub model_id: String,
    pub params: GenParams,
    pub limits: OptimizerLimits,
}

impl<'a> Optimizer<'a> {
    pub fn new(
        gateway: &'a Gateway,
        templates: &'a TemplateSet,
        model_id: impl Into<String>,
        params: GenParams,
    ) -> Self {
        Optimizer {
            gateway,
            templates,
            model_id: model_id.into(),
            params,
            limits: OptimizerLimits::default(),
        }
    }

    fn reflector(&self) -> Reflector<'a> {
        let mut reflector = Reflector::new(self.gateway, self.templates, self.model_id.clone(), self.params);
        reflector.min_roles = self.limits.min_roles;
        reflector.max_roles = self.limits.max_roles;
        reflector
    }

    fn complete(&self, key: &str, vars: &[(&str, &str)]) -> Result<String> {
        let prompt = self.templates.render(key, vars)?;
        let request = ChatRequest::single_user(&self.model_id, self.params, prompt);
        Ok(self.gateway.complete(&request)?.text)
    }

    /// Constrained summary of the target content, capped by prompt
    /// instruction at `summary_word_cap` words.
    pub fn summarize_content(&self, source: &ContentSource) -> Result<String> {
        require_text(source)?;
        let text = self.complete("stages/summarize", &[("content", &source.text)])?;
        Ok(text.trim().to_string())
    }

    /// One-paragraph statement of the underlying informational motivation,
    /// inferred from the content and its summary.
    pub fn infer_initial_intent(&self, source: &ContentSource, summary: &str) -> Result<String> {
        require_text(source)?;
        if summary.trim().is_empty() {
            return Err(Error::InvalidInput {
                reason: "summary is empty".into(),
            });
        }
        let text = self.complete(
            "stages/intent",
            &[("content", &source.text), ("summary", summary)],
        )?;
        Ok(text.trim().to_string())
    }

    /// Decompose an intent into explicit optimization steps.
    pub fn plan_steps(&self, source: &ContentSource, intent: &str) -> Result<Vec<OptimizationStep>> {
        require_text(source)?;
        if intent.trim().is_empty() {
            return Err(Error::InvalidInput {
                reason: "intent is empty".into(),
            });
        }
        let text = self.complete(
            "stages/plan",
            &[
                ("min_steps", &self.limits.min_steps.to_string()),
                ("max_steps", &self.limits.max_steps.to_string()),
                ("intent", intent),
                ("content", &source.text),
            ],
        )?;
        self.parse_plan(&text)
    }

    /// Step planning straight from the content, used by the ablation that
    /// drops intent modeling but keeps planning.
    fn plan_steps_direct(&self, source: &ContentSource) -> Result<Vec<OptimizationStep>> {
        let text = self.complete(
            "stages/plan_direct",
            &[
                ("min_steps", &self.limits.min_steps.to_string()),
                ("max_steps", &self.limits.max_steps.to_string()),
                ("content", &source.text),
            ],
        )?;
        self.parse_plan(&text)
    }

    fn parse_plan(&self, text: &str) -> Result<Vec<OptimizationStep>> {
        let mut steps = parse_steps(text)?;
        if steps.len() < self.limits.min_steps {
            return Err(Error::TooFewSteps {
                count: steps.len(),
                min: self.limits.min_steps,
            });
        }
        steps.truncate(self.limits.max_steps);
        Ok(steps)
    }

    /// Intent-aligned rewrite. `intent` may be empty only for the
    /// simple_gseo variants and `steps` may be empty for ablations; the
    /// template is picked by what is present. Output must land between
    /// `rewrite_min_ratio` and `rewrite_max_ratio` of the original word
    /// count; one retry with the violation in context, then an error.
    pub fn rewrite_content(
        &self,
        source: &ContentSource,
        intent: &str,
        steps: &[OptimizationStep],
    ) -> Result<String> {
        require_text(source)?;
        self.rewrite_counted(source, intent, steps).map(|(text, _)| text)
    }

    /// Issue a rewrite request and enforce the length guard, retrying once.
    /// Returns the text and the number of completions spent.
    fn guarded_rewrite(&self, source: &ContentSource, request: ChatRequest) -> Result<(String, u32)> {
        let original_words = source.text.split_whitespace().count();
        let min_words = ((original_words as f64) * self.limits.rewrite_min_ratio).ceil() as usize;
        let max_words = ((original_words as f64) * self.limits.rewrite_max_ratio).floor() as usize;
        let in_bounds = |text: &str| {
            let words = text.split_whitespace().count();
            words >= min_words.max(1) && words <= max_words.max(1)
        };

        let first = self.gateway.complete(&request)?;
        let text = first.text.trim().to_string();
        if in_bounds(&text) {
            return Ok((text, 1));
        }
        let retry = request.with_followup(
            first.text,
            format!(
                "That rewrite is {} words; the original is {original_words}. Produce a rewrite between {min_words} and {max_words} words.",
                text.split_whitespace().count()
            ),
        );
        let second = self.gateway.complete(&retry)?;
        let text = second.text.trim().to_string();
        if in_bounds(&text) {
            return Ok((text, 2));
        }
        Err(Error::LengthGuardViolation {
            words: text.split_whitespace().count(),
            original_words,
            min_ratio: self.limits.rewrite_min_ratio,
            max_ratio: self.limits.rewrite_max_ratio,
        })
    }

    /// Run one strategy over one source, recording every intermediate
    /// artifact.
    pub fn apply_strategy(&self, strategy: StrategyId, source: &ContentSource) -> Result<OptimizationTrace> {
        require_text(source)?;
        let mut calls = 0u32;

        let mut trace = OptimizationTrace {
            strategy,
            summary: None,
            initial_intent: None,
            refined_intent: None,
            reflection: None,
            steps: Vec::new(),
            rewritten_text: String::new(),
            elapsed_calls: 0,
        };

        if strategy.is_baseline() {
            let prompt = self
                .templates
                .render(&format!("strategies/{}", strategy.name()), &[("content", &source.text)])?;
            let request = ChatRequest::single_user(&self.model_id, self.params, prompt);
            let (text, spent) = self
                .guarded_rewrite(source, request)
                .map_err(|e| e.in_stage("rewrite"))?;
            trace.rewritten_text = text;
            trace.elapsed_calls = spent;
            return Ok(trace);
        }

        match strategy {
            StrategyId::RaidGseo => {
                let summary = self.summarize_content(source).map_err(|e| e.in_stage("summarize"))?;
                calls += 1;
                let initial = self
                    .infer_initial_intent(source, &summary)
                    .map_err(|e| e.in_stage("intent"))?;
                calls += 1;
                let (reflection, reflect_calls) = self.reflector().reflect_counted(&initial, &summary)?;
                calls += reflect_calls;
                let steps = self
                    .plan_steps(source, &reflection.refined_intent)
                    .map_err(|e| e.in_stage("plan"))?;
                calls += 1;
                let (rewritten, spent) = self
                    .rewrite_counted(source, &reflection.refined_intent, &steps)
                    .map_err(|e| e.in_stage("rewrite"))?;
                calls += spent;

                trace.summary = Some(summary);
                trace.initial_intent = Some(initial);
                trace.refined_intent = Some(reflection.refined_intent.clone());
                trace.reflection = Some(reflection);
                trace.steps = steps;
                trace.rewritten_text = rewritten;
            }
            StrategyId::SimpleGseoNoStep => {
                let (rewritten, spent) = self
                    .rewrite_counted(source, "", &[])
                    .map_err(|e| e.in_stage("rewrite"))?;
                calls += spent;
                trace.rewritten_text = rewritten;
            }
            StrategyId::SimpleGseoWithStep => {
                let steps = self.plan_steps_direct(source).map_err(|e| e.in_stage("plan"))?;
                calls += 1;
                let (rewritten, spent) = self
                    .rewrite_counted(source, "", &steps)
                    .map_err(|e| e.in_stage("rewrite"))?;
                calls += spent;
                trace.steps = steps;
                trace.rewritten_text = rewritten;
            }
            StrategyId::IdGseoNoSummary => {
                // the raw, unsummarized text stands in for the summary
                let initial = self
                    .infer_initial_intent(source, &source.text)
                    .map_err(|e| e.in_stage("intent"))?;
                calls += 1;
                let steps = self.plan_steps(source, &initial).map_err(|e| e.in_stage("plan"))?;
                calls += 1;
                let (rewritten, spent) = self
                    .rewrite_counted(source, &initial, &steps)
                    .map_err(|e| e.in_stage("rewrite"))?;
                calls += spent;
                trace.initial_intent = Some(initial);
                trace.steps = steps;
                trace.rewritten_text = rewritten;
            }
            StrategyId::IdGseoWithSummary => {
                let summary = self.summarize_content(source).map_err(|e| e.in_stage("summarize"))?;
                calls += 1;
                let initial = self
                    .infer_initial_intent(source, &summary)
                    .map_err(|e| e.in_stage("intent"))?;
                calls += 1;
                let steps = self.plan_steps(source, &initial).map_err(|e| e.in_stage("plan"))?;
                calls += 1;
                let (rewritten, spent) = self
                    .rewrite_counted(source, &initial, &steps)
                    .map_err(|e| e.in_stage("rewrite"))?;
                calls += spent;
                trace.summary = Some(summary);
                trace.initial_intent = Some(initial);
                trace.steps = steps;
                trace.rewritten_text = rewritten;
            }
            _ => unreachable!("baselines handled above"),
        }

        trace.elapsed_calls = calls;
        debug_assert_eq!(trace.populated_stage_set(), strategy.stage_set());
        Ok(trace)
    }

    /// `rewrite_content` with call accounting, for trace bookkeeping.
    fn rewrite_counted(
        &self,
        source: &ContentSource,
        intent: &str,
        steps: &[OptimizationStep],
    ) -> Result<(String, u32)> {
        let steps_block = render_steps(steps);
        let prompt = match (intent.trim().is_empty(), steps.is_empty()) {
            (false, _) => self.templates.render(
                "stages/rewrite",
                &[
                    ("intent", intent),
                    ("steps", steps_block.as_deref().unwrap_or("(no explicit steps)")),
                    ("content", &source.text),
                ],
            )?,
            (true, false) => self.templates.render(
                "stages/rewrite_steps",
                &[
                    ("steps", steps_block.as_deref().unwrap_or_default()),
                    ("content", &source.text),
                ],
            )?,
            (true, true) => self
                .templates
                .render("stages/rewrite_direct", &[("content", &source.text)])?,
        };
        self.guarded_rewrite(source, ChatRequest::single_user(&self.model_id, self.params, prompt))
    }
}

fn require_text(source: &ContentSource) -> Result<()> {
    if source.text.trim().is_empty() {
        Err(Error::InvalidInput {
            reason: "source text is empty".into(),
        })
    } else {
        Ok(())
    }
}

fn render_steps(steps: &[OptimizationStep]) -> Option<String> {
    if steps.is_empty() {
        return None;
    }
    Some(
        steps
            .iter()
            .enumerate()
            .map(|(i, s)| {
                format!(
                    "{}. [{}] via [{}]: {}",
                    i + 1,
                    s.objective_label,
                    s.action_label,
                    s.instruction_text
                )
            })
            .collect::<Vec<_>>()
            .join("\n"),
    )
}

/// Parse "n. OBJECTIVE: / ACTION: / INSTRUCTION:" blocks. Each numbered step
/// must carry all three fields.
fn parse_steps(text: &str) -> Result<Vec<OptimizationStep>> {
    struct Partial {
        line: usize,
        objective: Option<String>,
        action: Option<String>,
        instruction: Option<String>,
    }

    fn finish(partial: Partial, steps: &mut Vec<OptimizationStep>) -> Result<()> {
        let missing = |field: &str, line: usize| Error::StepParseError {
            line,
            reason: format!("missing {field}"),
        };
        let objective_label = partial.objective.ok_or_else(|| missing("OBJECTIVE", partial.line))?;
        let action_label = partial.action.ok_or_else(|| missing("ACTION", partial.line))?;
        let instruction_text = partial.instruction.ok_or_else(|| missing("INSTRUCTION", partial.line))?;
        if instruction_text.is_empty() {
            return Err(missing("INSTRUCTION", partial.line));
        }
        steps.push(OptimizationStep {
            objective_label,
            action_label,
            instruction_text,
        });
        Ok(())
    }

    let mut steps = Vec::new();
    let mut current: Option<Partial> = None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut line = raw.trim();
        if line.is_empty() {
            continue;
        }
        // strip a leading "3." / "3)" step number
        let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
        let numbered = digits > 0 && matches!(line[digits..].chars().next(), Some('.') | Some(')'));
        if numbered {
            line = line[digits + 1..].trim();
            if let Some(done) = current.take() {
                finish(done, &mut steps)?;
            }
            current = Some(Partial {
                line: line_no,
                objective: None,
                action: None,
                instruction: None,
            });
            if line.is_empty() {
                continue;
            }
        }
        let Some(partial) = current.as_mut() else {
            return Err(Error::StepParseError {
                line: line_no,
                reason: "field line before any numbered step".into(),
            });
        };
        if let Some(rest) = line.strip_prefix("OBJECTIVE:") {
            partial.objective = Some(rest.trim().to_string());
        } else if let Some(rest) = line.strip_prefix("ACTION:") {
            partial.action = Some(rest.trim().to_string());
        } else if let Some(rest) = line.strip_prefix("INSTRUCTION:") {
            partial.instruction = Some(rest.trim().to_string());
        } else if let Some(instruction) = partial.instruction.as_mut() {
            // instruction paragraphs may wrap
            instruction.push(' ');
            instruction.push_str(line);
        } else {
            return Err(Error::StepParseError {
                line: line_no,
                reason: format!("unrecognized line {line:?}"),
            });
        }
    }
    if let Some(done) = current.take() {
        finish(done, &mut steps)?;
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_roundtrip() {
        for strategy in StrategyId::ALL {
            assert_eq!(StrategyId::parse(strategy.name()).unwrap(), strategy);
        }
        assert!(StrategyId::parse("bogus").is_err());
    }

    #[test]
    fn fourteen_strategies_nine_baselines() {
        assert_eq!(StrategyId::ALL.len(), 14);
        assert_eq!(StrategyId::ALL.iter().filter(|s| s.is_baseline()).count(), 9);
    }

    #[test]
    fn stage_sets_match_definitions() {
        let raid = StrategyId::RaidGseo.stage_set();
        assert!(raid.summary && raid.initial_intent && raid.reflection && raid.refined_intent && raid.steps);

        let no_summ = StrategyId::IdGseoNoSummary.stage_set();
        assert!(!no_summ.summary && no_summ.initial_intent && !no_summ.reflection && no_summ.steps);

        let simple = StrategyId::SimpleGseoNoStep.stage_set();
        assert_eq!(simple, StageSet::default());

        for baseline in StrategyId::BASELINES {
            assert_eq!(baseline.stage_set(), StageSet::default());
        }
    }

    #[test]
    fn parses_wellformed_plan() {
        let text = "1. OBJECTIVE: improve completeness\n   ACTION: add background\n   INSTRUCTION: Add the missing setup section.\n2. OBJECTIVE: clarity\n   ACTION: restructure\n   INSTRUCTION: Reorder the guidance.";
        let steps = parse_steps(text).unwrap();
        assert_eq!(steps.len(), 2);
        assert_eq!(steps[0].objective_label, "improve completeness");
        assert_eq!(steps[1].instruction_text, "Reorder the guidance.");
    }

    #[test]
    fn plan_missing_instruction_names_field() {
        let text = "1. OBJECTIVE: a\n   ACTION: b";
        let err = parse_steps(text).unwrap_err();
        assert_eq!(err.code(), "step-parse-error");
        assert!(err.to_string().contains("INSTRUCTION"), "{err}");
    }

    #[test]
    fn plan_with_wrapped_instruction() {
        let text = "1. OBJECTIVE: a\nACTION: b\nINSTRUCTION: Do the thing\nacross two lines.";
        let steps = parse_steps(text).unwrap();
        assert_eq!(steps[0].instruction_text, "Do the thing across two lines.");
    }
}
