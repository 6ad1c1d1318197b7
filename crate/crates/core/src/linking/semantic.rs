//! Functional role of each surviving table (target, bridge, filter).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::LogicalPlan;
use crate::llm::{extract_json_object, parsed_or_fallback, ChatRequest, ExtractError, Gateway, GatewayError};
use crate::prompts::{Prompts, Template};
use crate::schema::{normalize_ident, render_subset, DatabaseSchema, RenderStyle, SchemaSubset};

pub const UNKNOWN_ROLE: &str = "unknown";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleAnalysis {
    pub database_structure: String,
    pub content_analysis: String,
    /// Keyed by normalized table name.
    pub table_roles: BTreeMap<String, String>,
}

impl RoleAnalysis {
    /// Every table of the subset marked `unknown`.
    pub fn unknown(tables: impl IntoIterator<Item = String>) -> Self {
        Self {
            table_roles: tables
                .into_iter()
                .map(|t| (t, UNKNOWN_ROLE.to_string()))
                .collect(),
            ..Self::default()
        }
    }

    pub fn role(&self, table: &str) -> &str {
        self.table_roles
            .get(&normalize_ident(table))
            .map(String::as_str)
            .unwrap_or(UNKNOWN_ROLE)
    }

    /// Summary used as the synthesis prompt's semantic analysis.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if !self.database_structure.is_empty() {
            out.push_str(&format!("Database structure: {}\n", self.database_structure));
        }
        if !self.content_analysis.is_empty() {
            out.push_str(&format!("Content analysis: {}\n", self.content_analysis));
        }
        out.push_str("Table roles:\n");
        for (t, r) in &self.table_roles {
            out.push_str(&format!("- {t}: {r}\n"));
        }
        out
    }
}

fn text_of(v: Option<&Json>) -> String {
    match v {
        Some(Json::String(s)) => s.clone(),
        Some(Json::Null) | None => String::new(),
        Some(other) => other.to_string(),
    }
}

pub fn parse_roles(content: &str) -> Result<RoleAnalysis, ExtractError> {
    let v = extract_json_object(content)?;
    let Some(Json::Object(functions)) = v.get("table_functions") else {
        return Err(ExtractError::ParseFailure("missing table_functions".into()));
    };
    Ok(RoleAnalysis {
        database_structure: text_of(v.get("database_structure")),
        content_analysis: text_of(v.get("query_specific_content_analysis")),
        table_roles: functions
            .iter()
            .map(|(t, r)| (normalize_ident(t), text_of(Some(r))))
            .collect(),
    })
}

#[allow(clippy::too_many_arguments)]
pub fn semantic_link(
    gateway: &Gateway,
    prompts: &Prompts,
    question: &str,
    evidence: &str,
    plan: &LogicalPlan,
    schema: &DatabaseSchema,
    pruned: &SchemaSubset,
    critical_rules: &str,
    retries: usize,
    max_output_tokens: u64,
) -> Result<RoleAnalysis, GatewayError> {
    let schema_text = render_subset(schema, pruned, RenderStyle::Full)
        .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
    let plan_text = plan.render();
    let prompt = prompts
        .render(
            Template::Semantics,
            &[
                ("critical_rules", critical_rules),
                ("question", question),
                ("plan", &plan_text),
                ("evidence", evidence),
                ("schema", &schema_text),
            ],
        )
        .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
    let req = ChatRequest::user_prompt(Template::Semantics.name(), prompt, 0.0, max_output_tokens);
    let tables = pruned.table_names();
    let Some(mut roles) = parsed_or_fallback(gateway.complete_parsed(&req, retries, parse_roles))? else {
        return Ok(RoleAnalysis::unknown(tables));
    };
    roles.table_roles.retain(|t, _| {
        let keep = tables.contains(t);
        if !keep {
            log::warn!("role analysis names table {t:?} outside the pruned schema; dropped");
        }
        keep
    });
    Ok(roles)
}
