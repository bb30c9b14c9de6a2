//! Preference analysis over optimization traces: which user-role
//! perspectives the reflection stage favors, and which objectives and
//! actions the planned steps target.
//!
//! Labeling runs in one of two modes with identical output shape: a
//! constrained LLM single-choice prompt whose reply must match a category
//! verbatim, or an offline keyword table shipped with the taxonomy files.
//! An instance that defeats the labeler lands in the taxonomy's fallback
//! category and is counted, so totals always equal instance counts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{ChatRequest, Gateway, GenParams};
use crate::reflection::RolePersona;
use crate::strategy::{OptimizationStep, OptimizationTrace};
use crate::templates::TemplateSet;
use crate::viz::svg_bar_chart;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    /// Lowercase substrings for offline matching; first category with a hit
    /// wins, in file order.
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub name: String,
    pub categories: Vec<Category>,
    /// Category for unmatched instances, always listed last.
    pub fallback: String,
}

impl Taxonomy {
    /// Role taxonomy from the template set (`taxonomy/roles`).
    pub fn roles(templates: &TemplateSet) -> Result<Taxonomy> {
        let text = templates.get("taxonomy/roles")?;
        Ok(Taxonomy {
            name: "roles".into(),
            categories: parse_category_lines(text.lines())?,
            fallback: "Uncategorized".into(),
        })
    }

    /// Step taxonomies from `taxonomy/steps`: the `[objectives]` and
    /// `[actions]` sections.
    pub fn steps(templates: &TemplateSet) -> Result<(Taxonomy, Taxonomy)> {
        let text = templates.get("taxonomy/steps")?;
        let mut objective_lines: Vec<&str> = Vec::new();
        let mut action_lines: Vec<&str> = Vec::new();
        let mut section = None;
        for line in text.lines() {
            match line.trim() {
                "[objectives]" => section = Some(true),
                "[actions]" => section = Some(false),
                _ => match section {
                    Some(true) => objective_lines.push(line),
                    Some(false) => action_lines.push(line),
                    None => {}
                },
            }
        }
        let objectives = parse_category_lines(objective_lines.into_iter())?;
        let actions = parse_category_lines(action_lines.into_iter())?;
        if objectives.is_empty() || actions.is_empty() {
            return Err(Error::ConfigError {
                reason: "step taxonomy needs [objectives] and [actions] sections".into(),
            });
        }
        Ok((
            Taxonomy {
                name: "step objectives".into(),
                categories: objectives,
                fallback: "other".into(),
            },
            Taxonomy {
                name: "step actions".into(),
                categories: actions,
                fallback: "other".into(),
            },
        ))
    }

    /// Load a taxonomy override from a plain file (no sections), keeping
    /// the given fallback.
    pub fn from_file(path: &Path, name: &str, fallback: &str) -> Result<Taxonomy> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Taxonomy {
            name: name.into(),
            categories: parse_category_lines(text.lines())?,
            fallback: fallback.into(),
        })
    }

    /// Every category name, fallback last.
    pub fn category_names(&self) -> Vec<String> {
        self.categories
            .iter()
            .map(|c| c.name.clone())
            .chain(std::iter::once(self.fallback.clone()))
            .collect()
    }

    /// Offline keyword match over lowercase text.
    fn match_keywords(&self, text: &str) -> String {
        let lower = text.to_lowercase();
        for category in &self.categories {
            if category.keywords.iter().any(|k| lower.contains(k.as_str())) {
                return category.name.clone();
            }
        }
        self.fallback.clone()
    }

    fn exact_category(&self, reply: &str) -> Option<String> {
        let trimmed = reply.trim();
        self.category_names().into_iter().find(|c| c == trimmed)
    }
}

fn parse_category_lines<'a>(lines: impl Iterator<Item = &'a str>) -> Result<Vec<Category>> {
    let mut categories = Vec::new();
    for line in lines {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (name, keywords) = match trimmed.split_once('|') {
            Some((name, kws)) => (
                name.trim().to_string(),
                kws.split(',')
                    .map(|k| k.trim().to_lowercase())
                    .filter(|k| !k.is_empty())
                    .collect(),
            ),
            None => (trimmed.to_string(), Vec::new()),
        };
        if categories.iter().any(|c: &Category| c.name == name) {
            return Err(Error::ConfigError {
                reason: format!("duplicate taxonomy category {name:?}"),
            });
        }
        categories.push(Category { name, keywords });
    }
    Ok(categories)
}

/// How instances get labeled.
pub enum Labeler<'a> {
    /// Shipped keyword tables; fully offline.
    Keyword,
    /// Constrained single-choice prompt against a gateway.
    Llm {
        gateway: &'a Gateway,
        templates: &'a TemplateSet,
        model_id: String,
        params: GenParams,
    },
}

impl Labeler<'_> {
    fn ask(&self, key: &str, vars: &[(&str, &str)]) -> Result<String> {
        match self {
            Labeler::Keyword => unreachable!("ask is only called in LLM mode"),
            Labeler::Llm {
                gateway,
                templates,
                model_id,
                params,
            } => {
                let prompt = templates.render(key, vars)?;
                let request = ChatRequest::single_user(model_id.clone(), *params, prompt);
                Ok(gateway.complete(&request)?.text)
            }
        }
    }
}

/// Label one persona with exactly one taxonomy category. LLM replies must
/// match a category verbatim; one re-ask, then `label-parse-error`.
pub fn label_role(persona: &RolePersona, taxonomy: &Taxonomy, labeler: &Labeler) -> Result<String> {
    if persona.name.trim().is_empty() || persona.description.trim().is_empty() {
        return Err(Error::InvalidInput {
            reason: "persona needs a name and a description".into(),
        });
    }
    match labeler {
        Labeler::Keyword => Ok(taxonomy.match_keywords(&format!("{} {}", persona.name, persona.description))),
        Labeler::Llm { .. } => {
            let categories = taxonomy.category_names().join("\n");
            let vars = [
                ("role_name", persona.name.as_str()),
                ("role_profile", persona.description.as_str()),
                ("categories", categories.as_str()),
            ];
            let reply = labeler.ask("stages/label_role", &vars)?;
            if let Some(category) = taxonomy.exact_category(&reply) {
                return Ok(category);
            }
            let retry = labeler.ask("stages/label_role", &vars)?;
            taxonomy
                .exact_category(&retry)
                .ok_or(Error::LabelParseError { raw: retry })
        }
    }
}

/// Label one step's objective and action. Offline mode matches each label
/// against its keyword table; LLM mode asks once for both lines.
pub fn parse_step_labels(
    step: &OptimizationStep,
    objectives: &Taxonomy,
    actions: &Taxonomy,
    labeler: &Labeler,
) -> Result<(String, String)> {
    if step.objective_label.trim().is_empty() || step.action_label.trim().is_empty() {
        return Err(Error::InvalidInput {
            reason: "step labels must be populated".into(),
        });
    }
    match labeler {
        Labeler::Keyword => Ok((
            objectives.match_keywords(&step.objective_label),
            actions.match_keywords(&step.action_label),
        )),
        Labeler::Llm { .. } => {
            let objective_names = objectives.category_names().join("\n");
            let action_names = actions.category_names().join("\n");
            let vars = [
                ("objective", step.objective_label.as_str()),
                ("action", step.action_label.as_str()),
                ("objective_categories", objective_names.as_str()),
                ("action_categories", action_names.as_str()),
            ];
            let reply = labeler.ask("stages/label_step", &vars)?;
            match parse_step_reply(&reply, objectives, actions) {
                Some(pair) => Ok(pair),
                None => {
                    let retry = labeler.ask("stages/label_step", &vars)?;
                    parse_step_reply(&retry, objectives, actions)
                        .ok_or(Error::LabelParseError { raw: retry })
                }
            }
        }
    }
}

fn parse_step_reply(reply: &str, objectives: &Taxonomy, actions: &Taxonomy) -> Option<(String, String)> {
    let mut objective = None;
    let mut action = None;
    for line in reply.lines() {
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix("OBJECTIVE_CATEGORY:") {
            objective = objectives.exact_category(rest);
        } else if let Some(rest) = trimmed.strip_prefix("ACTION_CATEGORY:") {
            action = actions.exact_category(rest);
        }
    }
    objective.zip(action)
}

/// Tally of labeled instances over one taxonomy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    /// Category order: taxonomy order, fallback last.
    pub categories: Vec<String>,
    pub counts: BTreeMap<String, usize>,
    pub total: usize,
    pub fractions: BTreeMap<String, f64>,
    /// Instances whose labeler errored and fell back.
    pub label_failures: usize,
}

impl DistributionReport {
    fn tally(taxonomy: &Taxonomy, labels: Vec<String>, label_failures: usize) -> Self {
        let categories = taxonomy.category_names();
        let mut counts: BTreeMap<String, usize> = categories.iter().map(|c| (c.clone(), 0)).collect();
        for label in &labels {
            *counts.get_mut(label).expect("label is a known category") += 1;
        }
        let total = labels.len();
        let fractions = counts
            .iter()
            .map(|(c, &n)| (c.clone(), if total == 0 { 0.0 } else { n as f64 / total as f64 }))
            .collect();
        DistributionReport {
            categories,
            counts,
            total,
            fractions,
            label_failures,
        }
    }

    pub fn fraction(&self, category: &str) -> f64 {
        self.fractions.get(category).copied().unwrap_or(0.0)
    }

    /// CSV with one row per category, taxonomy order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,count,fraction\n");
        for category in &self.categories {
            out.push_str(&format!(
                "{:?},{},{:.6}\n",
                category, self.counts[category], self.fractions[category]
            ));
        }
        out
    }

    pub fn to_svg(&self, title: &str) -> String {
        let values: Vec<f64> = self.categories.iter().map(|c| self.fractions[c]).collect();
        svg_bar_chart(title, &self.categories, &values, true)
    }
}

/// Label every persona instance in every reflective trace and tally.
/// Instances, not unique names: a persona appearing in three traces counts
/// three times.
pub fn role_distribution(
    traces: &[OptimizationTrace],
    taxonomy: &Taxonomy,
    labeler: &Labeler,
) -> Result<DistributionReport> {
    let personas: Vec<&RolePersona> = traces
        .iter()
        .filter_map(|t| t.reflection.as_ref())
        .flat_map(|r| r.roles.iter())
        .collect();
    if personas.is_empty() {
        return Err(Error::EmptyInput {
            what: "role instances (no traces carry reflections)".into(),
        });
    }
    let mut labels = Vec::with_capacity(personas.len());
    let mut failures = 0usize;
    for persona in personas {
        match label_role(persona, taxonomy, labeler) {
            Ok(label) => labels.push(label),
            Err(_) => {
                failures += 1;
                labels.push(taxonomy.fallback.clone());
            }
        }
    }
    Ok(DistributionReport::tally(taxonomy, labels, failures))
}

/// Label every planned step in every trace; one tally over objectives and
/// one over actions.
pub fn step_distribution(
    traces: &[OptimizationTrace],
    objectives: &Taxonomy,
    actions: &Taxonomy,
    labeler: &Labeler,
) -> Result<(DistributionReport, DistributionReport)> {
    let steps: Vec<&OptimizationStep> = traces.iter().flat_map(|t| t.steps.iter()).collect();
    if steps.is_empty() {
        return Err(Error::EmptyInput {
            what: "optimization steps (no traces carry plans)".into(),
        });
    }
    let mut objective_labels = Vec::with_capacity(steps.len());
    let mut action_labels = Vec::with_capacity(steps.len());
    let mut failures = 0usize;
    for step in steps {
        match parse_step_labels(step, objectives, actions, labeler) {
            Ok((o, a)) => {
                objective_labels.push(o);
                action_labels.push(a);
            }
            Err(_) => {
                failures += 1;
                objective_labels.push(objectives.fallback.clone());
                action_labels.push(actions.fallback.clone());
            }
        }
    }
    Ok((
        DistributionReport::tally(objectives, objective_labels, failures),
        DistributionReport::tally(actions, action_labels, failures),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reflection::ReflectionRecord;
    use crate::strategy::StrategyId;

    fn persona(name: &str, description: &str) -> RolePersona {
        RolePersona {
            name: name.into(),
            description: description.into(),
        }
    }

    fn trace_with_roles(names: &[&str]) -> OptimizationTrace {
        OptimizationTrace {
            strategy: StrategyId::RaidGseo,
            summary: Some("s".into()),
            initial_intent: Some("i".into()),
            refined_intent: Some("r".into()),
            reflection: Some(ReflectionRecord {
                roles: names.iter().map(|n| persona(n, "profile")).collect(),
                needs: Vec::new(),
                gaps: Vec::new(),
                refined_intent: "r".into(),
            }),
            steps: Vec::new(),
            rewritten_text: "x".into(),
            elapsed_calls: 0,
        }
    }

    #[test]
    fn default_taxonomy_has_five_categories_plus_fallback() {
        let taxonomy = Taxonomy::roles(TemplateSet::embedded()).unwrap();
        assert_eq!(taxonomy.categories.len(), 5);
        let names = taxonomy.category_names();
        assert_eq!(names.last().map(String::as_str), Some("Uncategorized"));
    }

    #[test]
    fn keyword_labels_for_known_personas() {
        let taxonomy = Taxonomy::roles(TemplateSet::embedded()).unwrap();
        assert_eq!(
            label_role(&persona("Educator", "Teaches classes."), &taxonomy, &Labeler::Keyword).unwrap(),
            "Knowledge Producers and Researchers"
        );
        assert_eq!(
            label_role(&persona("Home Cook", "Cooks daily."), &taxonomy, &Labeler::Keyword).unwrap(),
            "Civic Everyday Actors"
        );
        assert_eq!(
            label_role(&persona("Quux Wrangler", "Wrangles quux."), &taxonomy, &Labeler::Keyword).unwrap(),
            "Uncategorized"
        );
    }

    #[test]
    fn role_distribution_counts_instances() {
        let taxonomy = Taxonomy::roles(TemplateSet::embedded()).unwrap();
        let traces = vec![
            trace_with_roles(&["Educator", "Home Cook"]),
            trace_with_roles(&["Educator"]),
            trace_with_roles(&["Policy Maker"]),
        ];
        let report = role_distribution(&traces, &taxonomy, &Labeler::Keyword).unwrap();
        assert_eq!(report.total, 4);
        assert_eq!(report.counts["Knowledge Producers and Researchers"], 3);
        assert_eq!(report.counts["Civic Everyday Actors"], 1);
        let fraction_sum: f64 = report.fractions.values().sum();
        assert!((fraction_sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_traces_are_rejected() {
        let taxonomy = Taxonomy::roles(TemplateSet::embedded()).unwrap();
        let err = role_distribution(&[], &taxonomy, &Labeler::Keyword).unwrap_err();
        assert_eq!(err.code(), "empty-input");
    }

    #[test]
    fn step_labels_offline() {
        let (objectives, actions) = Taxonomy::steps(TemplateSet::embedded()).unwrap();
        let step = OptimizationStep {
            objective_label: "improve factual credibility by adding citations".into(),
            action_label: "content enrichment and expansion".into(),
            instruction_text: "Add citations.".into(),
        };
        let (o, a) = parse_step_labels(&step, &objectives, &actions, &Labeler::Keyword).unwrap();
        assert_eq!(o, "factual credibility");
        assert_eq!(a, "content enrichment and expansion");

        let vague = OptimizationStep {
            objective_label: "zorble the frobnicator".into(),
            action_label: "quuxify".into(),
            instruction_text: "Do it.".into(),
        };
        let (o, a) = parse_step_labels(&vague, &objectives, &actions, &Labeler::Keyword).unwrap();
        assert_eq!((o.as_str(), a.as_str()), ("other", "other"));
    }

    #[test]
    fn empty_step_label_is_a_precondition_error() {
        let (objectives, actions) = Taxonomy::steps(TemplateSet::embedded()).unwrap();
        let step = OptimizationStep {
            objective_label: "x".into(),
            action_label: "".into(),
            instruction_text: "y".into(),
        };
        let err = parse_step_labels(&step, &objectives, &actions, &Labeler::Keyword).unwrap_err();
        assert_eq!(err.code(), "invalid-input");
    }

    #[test]
    fn csv_shape_is_category_per_row() {
        let taxonomy = Taxonomy::roles(TemplateSet::embedded()).unwrap();
        let report = role_distribution(&[trace_with_roles(&["Educator"])], &taxonomy, &Labeler::Keyword).unwrap();
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 1 + 6);
        assert!(csv.starts_with("category,count,fraction\n"));
    }
}
