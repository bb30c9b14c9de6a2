//! Prompt templates.
//!
//! Every prompt the pipeline sends is rendered from a plain-text template
//! with `{placeholder}` slots. The default set ships embedded in the binary
//! (compiled from `templates/` in this crate) and can be overridden with a
//! directory of the same layout, so template fidelity studies never require
//! code changes. Reports record the template version of the set they ran
//! against.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Relative paths of every template in a complete set.
pub const TEMPLATE_KEYS: &[&str] = &[
    "stages/answer",
    "stages/summarize",
    "stages/intent",
    "stages/who",
    "stages/what",
    "stages/why",
    "stages/how",
    "stages/plan",
    "stages/plan_direct",
    "stages/rewrite",
    "stages/rewrite_steps",
    "stages/rewrite_direct",
    "stages/expand",
    "stages/label_role",
    "stages/label_step",
    "stages/rubric_gen",
    "strategies/traditional_seo",
    "strategies/unique_words",
    "strategies/simple_expression",
    "strategies/authoritative_expression",
    "strategies/fluent_expression",
    "strategies/terminology_addition",
    "strategies/reputation_addition",
    "strategies/quotation_addition",
    "strategies/statistics_addition",
    "rubrics/relevance",
    "rubrics/influence",
    "rubrics/uniqueness",
    "rubrics/diversity",
    "rubrics/click_likelihood",
    "rubrics/subjective_position",
    "rubrics/subjective_volume",
    "taxonomy/roles",
    "taxonomy/steps",
];

macro_rules! embedded_entries {
    ($($key:literal),* $(,)?) => {
        &[$(($key, include_str!(concat!("../templates/", $key, ".txt")))),*]
    };
}

const EMBEDDED: &[(&str, &str)] = embedded_entries![
    "stages/answer",
    "stages/summarize",
    "stages/intent",
    "stages/who",
    "stages/what",
    "stages/why",
    "stages/how",
    "stages/plan",
    "stages/plan_direct",
    "stages/rewrite",
    "stages/rewrite_steps",
    "stages/rewrite_direct",
    "stages/expand",
    "stages/label_role",
    "stages/label_step",
    "stages/rubric_gen",
    "strategies/traditional_seo",
    "strategies/unique_words",
    "strategies/simple_expression",
    "strategies/authoritative_expression",
    "strategies/fluent_expression",
    "strategies/terminology_addition",
    "strategies/reputation_addition",
    "strategies/quotation_addition",
    "strategies/statistics_addition",
    "rubrics/relevance",
    "rubrics/influence",
    "rubrics/uniqueness",
    "rubrics/diversity",
    "rubrics/click_likelihood",
    "rubrics/subjective_position",
    "rubrics/subjective_volume",
    "taxonomy/roles",
    "taxonomy/steps",
];

const EMBEDDED_VERSION: &str = include_str!("../templates/VERSION");

#[derive(Debug, Clone)]
pub struct TemplateSet {
    version: String,
    templates: BTreeMap<String, String>,
}

impl TemplateSet {
    /// The template set compiled into the binary.
    pub fn embedded() -> &'static TemplateSet {
        static SET: OnceLock<TemplateSet> = OnceLock::new();
        SET.get_or_init(|| {
            let templates = EMBEDDED
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect();
            TemplateSet {
                version: EMBEDDED_VERSION.trim().to_string(),
                templates,
            }
        })
    }

    /// Load an override set from a directory with the embedded layout
    /// (`stages/*.txt`, `strategies/*.txt`, `rubrics/*.txt`,
    /// `taxonomy/*.txt`, plus a `VERSION` file). All templates must be
    /// present; partial overrides are not a thing, so a run's provenance is
    /// always a single version string.
    pub fn from_dir(dir: &Path) -> Result<TemplateSet> {
        let version_path = dir.join("VERSION");
        let version = fs::read_to_string(&version_path)
            .map_err(|e| Error::io(&version_path, e))?
            .trim()
            .to_string();
        let mut templates = BTreeMap::new();
        for key in TEMPLATE_KEYS {
            let path = dir.join(format!("{key}.txt"));
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            templates.insert(key.to_string(), text);
        }
        Ok(TemplateSet { version, templates })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.templates
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::TemplateError {
                name: key.to_string(),
                reason: "unknown template".into(),
            })
    }

    /// Substitute `{name}` slots. Every variable passed in must appear in
    /// the template at least once — a template that silently drops its
    /// content slot would produce garbage prompts.
    pub fn render(&self, key: &str, vars: &[(&str, &str)]) -> Result<String> {
        let mut text = self.get(key)?.to_string();
        for (name, value) in vars {
            let slot = format!("{{{name}}}");
            if !text.contains(&slot) {
                return Err(Error::TemplateError {
                    name: key.to_string(),
                    reason: format!("missing placeholder {slot}"),
                });
            }
            text = text.replace(&slot, value);
        }
        Ok(text)
    }
}
