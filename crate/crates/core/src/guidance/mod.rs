//! Rule-selected SQL-writing tips.
//!
//! The tip library and the selection rules are JSON documents shipped with
//! the crate (`data/tips.json`, `data/rules.json`); either can be replaced at
//! run time. Selection is deterministic.

mod realize;
pub mod rules;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::SchemaSubset;

pub use realize::{parse_realized, realize_plan, RealizedPlan, RealizedStep};
pub use rules::{CompiledRule, Field, MatchInput, Predicate, RetrievalRule, RuleSource};

/// Tips attached to every question.
pub const UNIVERSAL_TIPS: [&str; 4] = ["TIP009", "TIP019", "TIP035", "TIP038"];

const BUILTIN_TIPS: &str = include_str!("../../data/tips.json");
const BUILTIN_RULES: &str = include_str!("../../data/rules.json");

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("malformed {what}: {message}")]
    Malformed { what: &'static str, message: String },
    #[error("duplicate tip id {0}")]
    DuplicateTip(String),
    #[error("tip {tip} has unknown category {category}")]
    UnknownCategory { tip: String, category: String },
    #[error("rule {rule} emits unknown tip {tip}")]
    UnknownTip { rule: String, tip: String },
    #[error("rule {rule} has a bad pattern: {message}")]
    BadPattern { rule: String, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tip {
    pub id: String,
    pub category: String,
    pub title: String,
    pub description: String,
}

#[derive(Deserialize)]
struct TipFile {
    categories: Vec<String>,
    tips: Vec<Tip>,
}

#[derive(Deserialize)]
struct RuleFile {
    rules: Vec<RetrievalRule>,
}

/// Tip library plus compiled rules. Immutable once built.
#[derive(Debug, Clone)]
pub struct Guidance {
    categories: Vec<String>,
    tips: BTreeMap<String, Tip>,
    rules: Vec<CompiledRule>,
}

impl Guidance {
    pub fn builtin() -> Self {
        Self::from_documents(BUILTIN_TIPS, BUILTIN_RULES).expect("shipped guidance data is valid")
    }

    /// Built-in data with either file replaced.
    pub fn load(tips: Option<&Path>, rules: Option<&Path>) -> Result<Self, GuidanceError> {
        let tips = match tips {
            Some(p) => std::fs::read_to_string(p)?,
            None => BUILTIN_TIPS.to_string(),
        };
        let rules = match rules {
            Some(p) => std::fs::read_to_string(p)?,
            None => BUILTIN_RULES.to_string(),
        };
        Self::from_documents(&tips, &rules)
    }

    pub fn from_documents(tips: &str, rules: &str) -> Result<Self, GuidanceError> {
        let tf: TipFile = serde_json::from_str(tips).map_err(|e| GuidanceError::Malformed {
            what: "tip library",
            message: e.to_string(),
        })?;
        let rf: RuleFile = serde_json::from_str(rules).map_err(|e| GuidanceError::Malformed {
            what: "rules",
            message: e.to_string(),
        })?;
        let mut lib = BTreeMap::new();
        for tip in tf.tips {
            if !tf.categories.contains(&tip.category) {
                return Err(GuidanceError::UnknownCategory {
                    tip: tip.id,
                    category: tip.category,
                });
            }
            if lib.contains_key(&tip.id) {
                return Err(GuidanceError::DuplicateTip(tip.id));
            }
            lib.insert(tip.id.clone(), tip);
        }
        for id in UNIVERSAL_TIPS {
            if !lib.contains_key(id) {
                return Err(GuidanceError::UnknownTip {
                    rule: "universal".into(),
                    tip: id.into(),
                });
            }
        }
        let mut compiled = Vec::with_capacity(rf.rules.len());
        for rule in rf.rules {
            if let Some(t) = rule.emits.iter().find(|t| !lib.contains_key(*t)) {
                return Err(GuidanceError::UnknownTip {
                    rule: rule.id.clone(),
                    tip: t.clone(),
                });
            }
            compiled.push(CompiledRule::new(rule)?);
        }
        Ok(Self {
            categories: tf.categories,
            tips: lib,
            rules: compiled,
        })
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn tip(&self, id: &str) -> Option<&Tip> {
        self.tips.get(id)
    }

    pub fn tips(&self) -> impl Iterator<Item = &Tip> {
        self.tips.values()
    }

    pub fn rules(&self) -> impl Iterator<Item = &RetrievalRule> {
        self.rules.iter().map(|r| &r.rule)
    }

    /// Ids of the tips selected for a fully assembled input.
    pub fn select(&self, input: &MatchInput) -> BTreeSet<String> {
        let mut ids: BTreeSet<String> = UNIVERSAL_TIPS.iter().map(|s| s.to_string()).collect();
        for r in &self.rules {
            if r.fires(input) {
                ids.extend(r.rule.emits.iter().cloned());
            }
        }
        ids
    }

    /// Tips for a question, ordered by id.
    pub fn retrieve_tips(
        &self,
        question: &str,
        evidence: &str,
        realized: Option<&RealizedPlan>,
        schema: &SchemaSubset,
    ) -> Vec<Tip> {
        let input = MatchInput {
            question: question.to_string(),
            evidence: evidence.to_string(),
            plan: realized.map(RealizedPlan::text).unwrap_or_default(),
            plan_steps: realized.map_or(0, |r| r.steps.len()),
            tables: schema.table_names().into_iter().collect(),
            columns: schema.refs().iter().map(|r| r.column.clone()).collect(),
        };
        self.select(&input)
            .into_iter()
            .filter_map(|id| self.tips.get(&id).cloned())
            .collect()
    }
}

/// `[TIPnnn] Title` followed by the description, one block per tip.
pub fn render_guidance(tips: &[Tip]) -> String {
    let mut sorted: Vec<&Tip> = tips.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    sorted.dedup_by(|a, b| a.id == b.id);
    sorted
        .iter()
        .map(|t| format!("[{}] {}\n{}", t.id, t.title, t.description))
        .collect::<Vec<_>>()
        .join("\n\n")
}
