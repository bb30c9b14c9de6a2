//! Multi-role deep reflection over an inferred search intent.
//!
//! Four structured passes generalize the creator's initial intent: who would
//! retrieve the content (role personas), what each role needs (motivations
//! and search goals), why the initial intent misses those needs (gap
//! diagnoses), and how to reconstruct the intent so it generalizes. The What
//! and Why passes run once per role so each output is conditioned on exactly
//! one persona; the How pass consumes all needs and gaps. The whole process
//! is prompt-driven with no interactive input: 2 + 2·|roles| completions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{ChatRequest, Gateway, GenParams};
use crate::templates::TemplateSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolePersona {
    pub name: String,
    /// Domain background and knowledge profile.
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleNeed {
    pub role_name: String,
    pub motivations: Vec<String>,
    pub search_goals: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapDiagnosis {
    pub role_name: String,
    pub gap_description: String,
    pub misalignment_cause: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionRecord {
    pub roles: Vec<RolePersona>,
    pub needs: Vec<RoleNeed>,
    pub gaps: Vec<GapDiagnosis>,
    pub refined_intent: String,
}

impl ReflectionRecord {
    /// Coverage invariant: one need and one gap per role, names matching.
    pub fn covers_all_roles(&self) -> bool {
        self.roles.len() == self.needs.len()
            && self.roles.len() == self.gaps.len()
            && self
                .roles
                .iter()
                .zip(&self.needs)
                .zip(&self.gaps)
                .all(|((r, n), g)| r.name == n.role_name && r.name == g.role_name)
    }
}

pub struct Reflector<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateSet,
    pub model_id: String,
    pub params: GenParams,
    pub min_roles: usize,
    pub max_roles: usize,
}

impl<'a> Reflector<'a> {
    pub fn new(
        gateway: &'a Gateway,
        templates: &'a TemplateSet,
        model_id: impl Into<String>,
        params: GenParams,
    ) -> Self {
        Reflector {
            gateway,
            templates,
            model_id: model_id.into(),
            params,
            min_roles: 3,
            max_roles: 8,
        }
    }

    fn complete(&self, key: &str, vars: &[(&str, &str)]) -> Result<String> {
        let prompt = self.templates.render(key, vars)?;
        let request = ChatRequest::single_user(&self.model_id, self.params, prompt);
        Ok(self.gateway.complete(&request)?.text)
    }

    /// Who: representative user roles for this intent. Duplicate names
    /// (case-insensitive) collapse to the first occurrence; anything beyond
    /// `max_roles` is dropped.
    pub fn generate_roles(&self, initial_intent: &str, summary: &str) -> Result<Vec<RolePersona>> {
        require_nonempty(initial_intent, "initial intent")?;
        require_nonempty(summary, "summary")?;
        let text = self.complete(
            "stages/who",
            &[
                ("min_roles", &self.min_roles.to_string()),
                ("max_roles", &self.max_roles.to_string()),
                ("intent", initial_intent),
                ("summary", summary),
            ],
        )?;
        let mut roles = parse_roles(&text)?;
        roles.truncate(self.max_roles);
        if roles.len() < self.min_roles {
            return Err(Error::TooFewRoles {
                count: roles.len(),
                min: self.min_roles,
            });
        }
        Ok(roles)
    }

    /// What: one role's motivations and search goals, conditioned on its
    /// profile.
    pub fn derive_role_needs(&self, role: &RolePersona, initial_intent: &str) -> Result<RoleNeed> {
        require_nonempty(&role.name, "role name")?;
        require_nonempty(&role.description, "role profile")?;
        require_nonempty(initial_intent, "initial intent")?;
        let text = self.complete(
            "stages/what",
            &[
                ("role_name", &role.name),
                ("role_profile", &role.description),
                ("intent", initial_intent),
            ],
        )?;
        parse_need(&text, &role.name)
    }

    /// Why: the semantic gap between the initial intent and one role's
    /// needs, with its cause.
    pub fn diagnose_gap(&self, initial_intent: &str, need: &RoleNeed) -> Result<GapDiagnosis> {
        require_nonempty(initial_intent, "initial intent")?;
        if need.motivations.is_empty() || need.search_goals.is_empty() {
            return Err(Error::InvalidInput {
                reason: "role need must have at least one motivation and one goal".into(),
            });
        }
        let text = self.complete(
            "stages/why",
            &[
                ("role_name", &need.role_name),
                ("needs", &render_need(need)),
                ("intent", initial_intent),
            ],
        )?;
        parse_gap(&text, &need.role_name)
    }

    /// How: reconstruct the intent using all needs and gaps as constraints.
    pub fn reconstruct_intent(
        &self,
        initial_intent: &str,
        needs: &[RoleNeed],
        gaps: &[GapDiagnosis],
    ) -> Result<String> {
        require_nonempty(initial_intent, "initial intent")?;
        if needs.is_empty() || gaps.is_empty() || needs.len() != gaps.len() {
            return Err(Error::InvalidInput {
                reason: "reconstruction needs aligned, non-empty needs and gaps".into(),
            });
        }
        let needs_block = needs
            .iter()
            .map(|n| format!("{}:\n{}", n.role_name, render_need(n)))
            .collect::<Vec<_>>()
            .join("\n\n");
        let gaps_block = gaps
            .iter()
            .map(|g| format!("{}: {} (cause: {})", g.role_name, g.gap_description, g.misalignment_cause))
            .collect::<Vec<_>>()
            .join("\n");
        let text = self.complete(
            "stages/how",
            &[
                ("intent", initial_intent),
                ("needs", &needs_block),
                ("gaps", &gaps_block),
            ],
        )?;
        let refined = text.trim().to_string();
        if refined.is_empty() {
            return Err(Error::ParseError {
                what: "refined intent".into(),
                reason: "model returned empty text".into(),
            });
        }
        if refined == initial_intent {
            return Err(Error::ParseError {
                what: "refined intent".into(),
                reason: "identical to the initial intent".into(),
            });
        }
        Ok(refined)
    }

    /// Full Who -> (What, Why per role) -> How orchestration. Any stage
    /// failure aborts with the role attached; no partial record escapes.
    pub fn reflect(&self, initial_intent: &str, summary: &str) -> Result<ReflectionRecord> {
        Ok(self.reflect_counted(initial_intent, summary)?.0)
    }

    /// As `reflect`, also reporting how many completions were made.
    pub(crate) fn reflect_counted(
        &self,
        initial_intent: &str,
        summary: &str,
    ) -> Result<(ReflectionRecord, u32)> {
        let roles = self
            .generate_roles(initial_intent, summary)
            .map_err(|e| e.in_stage("who"))?;
        let mut calls = 1u32;

        let mut needs = Vec::with_capacity(roles.len());
        let mut gaps = Vec::with_capacity(roles.len());
        for role in &roles {
            let need = self
                .derive_role_needs(role, initial_intent)
                .map_err(|e| e.in_stage(format!("what({})", role.name)))?;
            calls += 1;
            let gap = self
                .diagnose_gap(initial_intent, &need)
                .map_err(|e| e.in_stage(format!("why({})", role.name)))?;
            calls += 1;
            needs.push(need);
            gaps.push(gap);
        }

        let refined_intent = self
            .reconstruct_intent(initial_intent, &needs, &gaps)
            .map_err(|e| e.in_stage("how"))?;
        calls += 1;

        let record = ReflectionRecord {
            roles,
            needs,
            gaps,
            refined_intent,
        };
        debug_assert!(record.covers_all_roles());
        Ok((record, calls))
    }
}

fn require_nonempty(value: &str, what: &str) -> Result<()> {
    if value.trim().is_empty() {
        Err(Error::InvalidInput {
            reason: format!("{what} is empty"),
        })
    } else {
        Ok(())
    }
}

fn render_need(need: &RoleNeed) -> String {
    let mut out = String::from("Motivations:\n");
    for m in &need.motivations {
        out.push_str(&format!("- {m}\n"));
    }
    out.push_str("Goals:\n");
    for g in &need.search_goals {
        out.push_str(&format!("- {g}\n"));
    }
    out.trim_end().to_string()
}

// ---------------------------------------------------------------------------
// output parsers

fn parse_roles(text: &str) -> Result<Vec<RolePersona>> {
    let mut roles: Vec<RolePersona> = Vec::new();
    let mut current_name: Option<String> = None;
    let mut current_profile = String::new();

    let flush = |name: &mut Option<String>, profile: &mut String, roles: &mut Vec<RolePersona>| -> Result<()> {
        if let Some(n) = name.take() {
            let description = profile.trim().to_string();
            if description.is_empty() {
                return Err(Error::RoleParseError {
                    reason: format!("role {n:?} has no PROFILE line"),
                });
            }
            if !roles.iter().any(|r: &RolePersona| r.name.eq_ignore_ascii_case(&n)) {
                roles.push(RolePersona {
                    name: n,
                    description,
                });
            }
            profile.clear();
        }
        Ok(())
    };

    for line in text.lines() {
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix("NAME:") {
            flush(&mut current_name, &mut current_profile, &mut roles)?;
            let name = rest.trim().to_string();
            if name.is_empty() {
                return Err(Error::RoleParseError {
                    reason: "empty NAME line".into(),
                });
            }
            current_name = Some(name);
        } else if let Some(rest) = trimmed.strip_prefix("PROFILE:") {
            if current_name.is_none() {
                return Err(Error::RoleParseError {
                    reason: "PROFILE line before any NAME line".into(),
                });
            }
            if !current_profile.is_empty() {
                current_profile.push(' ');
            }
            current_profile.push_str(rest.trim());
        } else if !trimmed.is_empty() && current_name.is_some() && !current_profile.is_empty() {
            // continuation of a profile paragraph
            current_profile.push(' ');
            current_profile.push_str(trimmed);
        }
    }
    flush(&mut current_name, &mut current_profile, &mut roles)?;

    if roles.is_empty() {
        return Err(Error::RoleParseError {
            reason: "no NAME/PROFILE blocks found".into(),
        });
    }
    Ok(roles)
}

fn parse_need(text: &str, role_name: &str) -> Result<RoleNeed> {
    let mut motivations = Vec::new();
    let mut search_goals = Vec::new();
    let mut section: Option<&str> = None;
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.eq_ignore_ascii_case("MOTIVATIONS:") {
            section = Some("motivations");
        } else if trimmed.eq_ignore_ascii_case("GOALS:") {
            section = Some("goals");
        } else if let Some(item) = trimmed.strip_prefix('-') {
            let item = item.trim();
            if item.is_empty() {
                continue;
            }
            match section {
                Some("motivations") => motivations.push(item.to_string()),
                Some("goals") => search_goals.push(item.to_string()),
                _ => {
                    return Err(Error::ParseError {
                        what: "role needs".into(),
                        reason: "bullet before any MOTIVATIONS/GOALS header".into(),
                    })
                }
            }
        }
    }
    if motivations.is_empty() {
        return Err(Error::ParseError {
            what: "role needs".into(),
            reason: "no items under MOTIVATIONS".into(),
        });
    }
    if search_goals.is_empty() {
        return Err(Error::ParseError {
            what: "role needs".into(),
            reason: "no items under GOALS".into(),
        });
    }
    Ok(RoleNeed {
        role_name: role_name.to_string(),
        motivations,
        search_goals,
    })
}

fn parse_gap(text: &str, role_name: &str) -> Result<GapDiagnosis> {
    let mut gap = None;
    let mut cause = None;
    for line in text.lines() {
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix("GAP:") {
            gap = Some(rest.trim().to_string());
        } else if let Some(rest) = trimmed.strip_prefix("CAUSE:") {
            cause = Some(rest.trim().to_string());
        }
    }
    let gap_description = gap.filter(|g| !g.is_empty()).ok_or_else(|| Error::ParseError {
        what: "gap diagnosis".into(),
        reason: "missing GAP line".into(),
    })?;
    let misalignment_cause = cause.filter(|c| !c.is_empty()).ok_or_else(|| Error::ParseError {
        what: "gap diagnosis".into(),
        reason: "missing CAUSE line".into(),
    })?;
    Ok(GapDiagnosis {
        role_name: role_name.to_string(),
        gap_description,
        misalignment_cause,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_three_roles() {
        let text = "NAME: Educator\nPROFILE: Teaches the topic.\n\nNAME: Home Cook\nPROFILE: Cooks at home daily.\n\nNAME: Policy Maker\nPROFILE: Drafts regulations.";
        let roles = parse_roles(text).unwrap();
        assert_eq!(roles.len(), 3);
        assert_eq!(roles[0].name, "Educator");
        assert_eq!(roles[2].description, "Drafts regulations.");
    }

    #[test]
    fn duplicate_role_names_collapse() {
        let text = "NAME: Educator\nPROFILE: First.\n\nNAME: educator\nPROFILE: Second.\n\nNAME: Cook\nPROFILE: Third.";
        let roles = parse_roles(text).unwrap();
        assert_eq!(roles.len(), 2);
        assert_eq!(roles[0].description, "First.");
    }

    #[test]
    fn role_without_profile_is_an_error() {
        let err = parse_roles("NAME: Educator\n\nNAME: Cook\nPROFILE: ok").unwrap_err();
        assert_eq!(err.code(), "role-parse-error");
    }

    #[test]
    fn parses_need_sections() {
        let text = "MOTIVATIONS:\n- learn the basics\n- compare options\nGOALS:\n- find a checklist\n- avoid mistakes";
        let need = parse_need(text, "Educator").unwrap();
        assert_eq!(need.motivations.len(), 2);
        assert_eq!(need.search_goals.len(), 2);
        assert_eq!(need.role_name, "Educator");
    }

    #[test]
    fn need_without_goals_is_an_error() {
        let err = parse_need("MOTIVATIONS:\n- a\n", "R").unwrap_err();
        assert_eq!(err.code(), "parse-error");
    }

    #[test]
    fn parses_gap_and_cause() {
        let gap = parse_gap("GAP: misses cost angle\nCAUSE: generic audience assumed", "R").unwrap();
        assert_eq!(gap.gap_description, "misses cost angle");
        assert_eq!(gap.misalignment_cause, "generic audience assumed");
    }

    #[test]
    fn gap_without_cause_names_the_field() {
        let err = parse_gap("GAP: something", "R").unwrap_err();
        assert!(err.to_string().contains("CAUSE"), "{err}");
    }
}
