//! Per-table data profiling: the model proposes queries for one table, they
//! run read-only, and the model judges the table's relevance from the
//! results.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::LinkingConfig;
use crate::exec::{Database, QueryOutcome};
use crate::llm::{
    extract_json_object, extract_sql_blocks, parsed_or_fallback, ChatRequest, ExtractError, Gateway,
    GatewayError,
};
use crate::prompts::{Prompts, Template};
use crate::schema::{render_table, ColumnRef, RenderStyle, Table};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevantColumn {
    pub column: String,
    pub reason: String,
    pub observations: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutedQuery {
    pub sql: String,
    pub outcome: QueryOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableObservation {
    pub table: String,
    pub relevant: bool,
    pub relevant_columns: Vec<RelevantColumn>,
    pub table_summary: String,
    pub executed_queries: Vec<ExecutedQuery>,
}

impl TableObservation {
    /// Columns this observation vouches for; empty when the table was judged
    /// irrelevant.
    pub fn relevant_refs(&self) -> Vec<ColumnRef> {
        if !self.relevant {
            return Vec::new();
        }
        self.relevant_columns
            .iter()
            .map(|c| ColumnRef::new(&self.table, &c.column))
            .collect()
    }
}

#[derive(Deserialize)]
struct VerdictColumn {
    #[serde(alias = "column", alias = "name")]
    column_name: String,
    #[serde(default, alias = "reason")]
    relevance_reason: String,
    #[serde(default)]
    observations: Json,
}

struct Verdict {
    relevant: bool,
    columns: Vec<VerdictColumn>,
    summary: String,
}

fn parse_verdict(content: &str) -> Result<Verdict, ExtractError> {
    let v = extract_json_object(content)?;
    let relevant = match v.get("relevant") {
        Some(Json::Bool(b)) => *b,
        Some(Json::String(s)) if s.eq_ignore_ascii_case("true") => true,
        Some(Json::String(s)) if s.eq_ignore_ascii_case("false") => false,
        _ => return Err(ExtractError::ParseFailure("verdict lacks a relevant flag".into())),
    };
    let columns = match v.get("relevant_columns") {
        None | Some(Json::Null) => Vec::new(),
        Some(c) => serde_json::from_value(c.clone())
            .map_err(|e| ExtractError::ParseFailure(format!("relevant_columns: {e}")))?,
    };
    let summary = match v.get("table_summary") {
        Some(Json::String(s)) => s.clone(),
        _ => String::new(),
    };
    Ok(Verdict {
        relevant,
        columns,
        summary,
    })
}

fn json_text(v: &Json) -> String {
    match v {
        Json::String(s) => s.clone(),
        Json::Null => String::new(),
        other => other.to_string(),
    }
}

/// The column lines of a table block.
fn column_listing(table: &Table) -> String {
    let block = render_table(table, RenderStyle::Full, &[]);
    match block.split_once("Columns:\n") {
        Some((_, cols)) => cols.trim_end().to_string(),
        None => block,
    }
}

fn render_executed(queries: &[ExecutedQuery]) -> String {
    let mut out = String::new();
    for (i, q) in queries.iter().enumerate() {
        let _ = write!(
            out,
            "Query {}:\n```sql\n{}\n```\nResult:\n{}\n\n",
            i + 1,
            q.sql,
            q.outcome.render().trim_end()
        );
    }
    out.trim_end().to_string()
}

fn all_columns(table: &Table, summary: &str) -> Vec<RelevantColumn> {
    table
        .columns
        .iter()
        .map(|c| RelevantColumn {
            column: c.name.clone(),
            reason: summary.to_string(),
            observations: String::new(),
        })
        .collect()
}

/// Profiles one table restricted to its surviving columns.
#[allow(clippy::too_many_arguments)]
pub fn profile_table(
    gateway: &Gateway,
    prompts: &Prompts,
    question: &str,
    evidence: &str,
    table: &Table,
    role: &str,
    db: &Database,
    config: &LinkingConfig,
) -> Result<TableObservation, GatewayError> {
    let exec = config.exec_options();
    let columns = column_listing(table);
    let explore_prompt = prompts
        .render(
            Template::ExploreSql,
            &[
                ("critical_rules", config.critical_rules.as_str()),
                ("table_name", table.name.as_str()),
                ("columns", &columns),
                ("question", question),
                ("role", role),
                ("evidence", evidence),
            ],
        )
        .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
    let req = ChatRequest::user_prompt(
        Template::ExploreSql.name(),
        explore_prompt.clone(),
        0.0,
        config.max_output_tokens,
    );
    let proposed = parsed_or_fallback(gateway.complete_parsed(&req, config.parse_retries, |c| {
        extract_sql_blocks(c).map(|s| (c.to_string(), s))
    }))?;

    let mut executed = Vec::new();
    let verdict_req = match proposed {
        Some((raw, statements)) => {
            if statements.len() > config.profile_query_cap {
                log::info!(
                    "profiling {}: {} queries proposed, running the first {}",
                    table.name,
                    statements.len(),
                    config.profile_query_cap
                );
            }
            for sql in statements.into_iter().take(config.profile_query_cap) {
                let outcome = db.explore(&sql, &exec);
                executed.push(ExecutedQuery { sql, outcome });
            }
            let observations = render_executed(&executed);
            let verdict_prompt = prompts
                .render(
                    Template::ExploreVerdict,
                    &[
                        ("table_name", table.name.as_str()),
                        ("observations", &observations),
                        ("question", question),
                        ("evidence", evidence),
                    ],
                )
                .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
            ChatRequest::new(Template::ExploreVerdict.name(), 0.0, config.max_output_tokens)
                .user(explore_prompt)
                .assistant(raw)
                .user(verdict_prompt)
        }
        None => {
            let observations = format!(
                "No exploration queries could be run. Judge from the schema alone.\n{}",
                render_table(table, RenderStyle::Full, &[])
            );
            let verdict_prompt = prompts
                .render(
                    Template::ExploreVerdict,
                    &[
                        ("table_name", table.name.as_str()),
                        ("observations", &observations),
                        ("question", question),
                        ("evidence", evidence),
                    ],
                )
                .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
            ChatRequest::user_prompt(
                Template::ExploreVerdict.name(),
                verdict_prompt,
                0.0,
                config.max_output_tokens,
            )
        }
    };

    let verdict = parsed_or_fallback(gateway.complete_parsed(&verdict_req, config.parse_retries, parse_verdict))?;
    let obs = match verdict {
        None => {
            let summary = "relevance verdict unparseable; all columns kept".to_string();
            TableObservation {
                table: table.name.clone(),
                relevant: true,
                relevant_columns: all_columns(table, &summary),
                table_summary: summary,
                executed_queries: executed,
            }
        }
        Some(v) => {
            let mut cols = Vec::new();
            for c in v.columns {
                match table.column(&c.column_name) {
                    Some(found) => {
                        if !cols.iter().any(|x: &RelevantColumn| x.column == found.name) {
                            cols.push(RelevantColumn {
                                column: found.name.clone(),
                                reason: c.relevance_reason,
                                observations: json_text(&c.observations),
                            })
                        }
                    }
                    None => log::warn!(
                        "verdict for {} names unknown column {:?}; dropped",
                        table.name,
                        c.column_name
                    ),
                }
            }
            if v.relevant && cols.is_empty() {
                // a relevant table with no named columns keeps all of them
                cols = all_columns(table, &v.summary);
            }
            TableObservation {
                table: table.name.clone(),
                relevant: v.relevant,
                relevant_columns: if v.relevant { cols } else { Vec::new() },
                table_summary: v.summary,
                executed_queries: executed,
            }
        }
    };
    Ok(obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::tests::scratch_db;
    use crate::exec::ExecErrorKind;
    use crate::llm::{ReplayEntry, ReplayScript};
    use crate::schema::Column;

    fn people() -> Table {
        Table::new(
            "people",
            vec![Column::new("id", "INTEGER"), Column::new("name", "TEXT"), Column::new("age", "INTEGER")],
        )
    }

    fn setup() -> (tempfile::TempDir, Database) {
        scratch_db(
            "CREATE TABLE people (id INTEGER PRIMARY KEY, name TEXT, age INTEGER);
             INSERT INTO people VALUES (1, 'a', 30), (2, 'b', NULL);",
        )
    }

    fn run(script: Vec<ReplayEntry>) -> (TableObservation, Gateway) {
        let (_dir, db) = setup();
        let gw = Gateway::replay(ReplayScript::new(script));
        let obs = profile_table(
            &gw,
            &Prompts::default(),
            "q",
            "",
            &people(),
            "target",
            &db,
            &LinkingConfig {
                parse_retries: 0,
                ..LinkingConfig::default()
            },
        )
        .unwrap();
        (obs, gw)
    }

    #[test]
    fn five_queries_recorded_and_errors_kept() {
        let sql = "```sql\nSELECT COUNT(*) FROM people;\nSELECT DISTINCT name FROM people;\nSELECT nope FROM people;\nSELECT MAX(age) FROM people;\nSELECT * FROM people LIMIT 1;\n```";
        let (obs, gw) = run(vec![
            ReplayEntry::new("sl_exp_sql", sql),
            ReplayEntry::new(
                "sl_exp_verdict",
                r#"{"relevant": true, "relevant_columns": [{"column_name": "age", "relevance_reason": "filter", "observations": "one null"}], "table_summary": "people"}"#,
            ),
        ]);
        assert_eq!(obs.executed_queries.len(), 5);
        match &obs.executed_queries[2].outcome {
            QueryOutcome::Error { error } => assert_eq!(error.kind, ExecErrorKind::MissingObject),
            other => panic!("expected an error, got {other:?}"),
        }
        assert_eq!(obs.relevant_refs(), vec![ColumnRef::new("people", "age")]);
        let verdict = &gw.trace()[1].request;
        assert_eq!(verdict.messages.len(), 3);
        assert!(verdict.messages[2].content.contains("Query 5:"));
    }

    #[test]
    fn verdict_failure_keeps_everything() {
        let (obs, _) = run(vec![
            ReplayEntry::new("sl_exp_sql", "```sql\nSELECT 1\n```"),
            ReplayEntry::new("sl_exp_verdict", "cannot say"),
        ]);
        assert!(obs.relevant);
        assert_eq!(obs.relevant_refs().len(), 3);
    }

    #[test]
    fn unparseable_sql_skips_execution() {
        let (obs, gw) = run(vec![
            ReplayEntry::new("sl_exp_sql", "no sql today"),
            ReplayEntry::new("sl_exp_verdict", r#"{"relevant": false, "relevant_columns": [], "table_summary": "noise"}"#),
        ]);
        assert!(obs.executed_queries.is_empty());
        assert!(!obs.relevant);
        assert!(obs.relevant_refs().is_empty());
        assert!(gw.trace()[1].request.joined_content().contains("schema alone"));
    }

    #[test]
    fn query_cap_applies() {
        let many: String = (0..11).map(|i| format!("SELECT {i};\n")).collect();
        let (obs, _) = run(vec![
            ReplayEntry::new("sl_exp_sql", format!("```sql\n{many}```")),
            ReplayEntry::new("sl_exp_verdict", r#"{"relevant": true, "relevant_columns": [{"column_name": "id"}]}"#),
        ]);
        assert_eq!(obs.executed_queries.len(), 8);
        assert!(obs.executed_queries.iter().all(|q| q.outcome.is_ok()));
    }
}
