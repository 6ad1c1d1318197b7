//! Prompt templates with `{{slot}}` placeholders.
//!
//! The built-in texts live in `templates/`. A directory of `<name>.txt` files
//! can override any of them at run time.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {template} has no value for slot {slot}")]
    MissingSlot { template: String, slot: String },
    #[error("template {template} has an unterminated slot")]
    Unterminated { template: String },
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Template {
    Plan,
    Aggregate,
    Delete,
    Select,
    Semantics,
    ExploreSql,
    ExploreVerdict,
    FinalSynthesis,
    RealizationPaths,
    ActionSpace,
    AgentStep,
    EvidenceLink,
    AnswerSelect,
}

impl Template {
    pub const ALL: [Template; 13] = [
        Template::Plan,
        Template::Aggregate,
        Template::Delete,
        Template::Select,
        Template::Semantics,
        Template::ExploreSql,
        Template::ExploreVerdict,
        Template::FinalSynthesis,
        Template::RealizationPaths,
        Template::ActionSpace,
        Template::AgentStep,
        Template::EvidenceLink,
        Template::AnswerSelect,
    ];

    /// File stem, also used as the default request tag.
    pub fn name(self) -> &'static str {
        match self {
            Template::Plan => "sl_plan",
            Template::Aggregate => "sl_agg",
            Template::Delete => "sl_del",
            Template::Select => "sl_sel",
            Template::Semantics => "sl_semantics",
            Template::ExploreSql => "sl_exp_sql",
            Template::ExploreVerdict => "sl_exp_verdict",
            Template::FinalSynthesis => "sl_final",
            Template::RealizationPaths => "sql_kw",
            Template::ActionSpace => "action_space",
            Template::AgentStep => "agent_step",
            Template::EvidenceLink => "evidence_link",
            Template::AnswerSelect => "answer_select",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            Template::Plan => include_str!("../templates/sl_plan.txt"),
            Template::Aggregate => include_str!("../templates/sl_agg.txt"),
            Template::Delete => include_str!("../templates/sl_del.txt"),
            Template::Select => include_str!("../templates/sl_sel.txt"),
            Template::Semantics => include_str!("../templates/sl_semantics.txt"),
            Template::ExploreSql => include_str!("../templates/sl_exp_sql.txt"),
            Template::ExploreVerdict => include_str!("../templates/sl_exp_verdict.txt"),
            Template::FinalSynthesis => include_str!("../templates/sl_final.txt"),
            Template::RealizationPaths => include_str!("../templates/sql_kw.txt"),
            Template::ActionSpace => include_str!("../templates/action_space.txt"),
            Template::AgentStep => include_str!("../templates/agent_step.txt"),
            Template::EvidenceLink => include_str!("../templates/evidence_link.txt"),
            Template::AnswerSelect => include_str!("../templates/answer_select.txt"),
        }
    }

    pub fn from_name(name: &str) -> Option<Template> {
        Template::ALL.into_iter().find(|t| t.name() == name)
    }
}

/// The template texts in use.
#[derive(Debug, Clone)]
pub struct Prompts {
    texts: BTreeMap<Template, String>,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            texts: Template::ALL
                .into_iter()
                .map(|t| (t, t.builtin().to_string()))
                .collect(),
        }
    }
}

impl Prompts {
    /// Built-ins, with any `<name>.txt` found in `dir` replacing its template.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut p = Self::default();
        for t in Template::ALL {
            let path = dir.join(format!("{}.txt", t.name()));
            if path.is_file() {
                p.texts.insert(t, std::fs::read_to_string(path)?);
            }
        }
        Ok(p)
    }

    pub fn set(&mut self, template: Template, text: impl Into<String>) {
        self.texts.insert(template, text.into());
    }

    pub fn text(&self, template: Template) -> &str {
        self.texts.get(&template).map(String::as_str).unwrap_or("")
    }

    pub fn render(&self, template: Template, slots: &[(&str, &str)]) -> Result<String, PromptError> {
        fill(template.name(), self.text(template), slots)
    }
}

/// Single-pass substitution: slot values are inserted verbatim and never
/// scanned for further placeholders.
pub fn fill(name: &str, text: &str, slots: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(text.len() + 256);
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or_else(|| PromptError::Unterminated {
            template: name.to_string(),
        })?;
        let slot = after[..end].trim();
        let value = slots
            .iter()
            .find(|(k, _)| *k == slot)
            .map(|(_, v)| *v)
            .ok_or_else(|| PromptError::MissingSlot {
                template: name.to_string(),
                slot: slot.to_string(),
            })?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Slot names used by a template text, in order of first appearance.
pub fn slots_of(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else { break };
        let slot = after[..end].trim().to_string();
        if !out.contains(&slot) {
            out.push(slot);
        }
        rest = &after[end + 2..];
    }
    out
}
