//! Deterministic fixtures: tiny SQLite databases, tasks over them, and
//! replay scripts that drive the whole pipeline without a live model.
//!
//! Every scenario is checked while it is built: the scripted answer must
//! match the gold query's result on the fixture database, and the scripted
//! linking result must cover the gold columns.

pub mod packages;
pub mod smoke;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::eval::{extract_gold_columns, GoldParseError};
use crate::exec::{compare, CompareMode, Database, ExecError, ExecOptions, ResultSet};
use crate::linking::LinkingConfig;
use crate::llm::{ReplayEntry, ReplayScript};
use crate::pipeline::{PipelineConfig, TaskRecord};
use crate::schema::{
    load_schema, merge_identical_tables, normalize_ident, partition_batches, ColumnRef,
    DatabaseSchema, SchemaError, SchemaSource,
};
use crate::tokens::ByteEstimator;

pub use packages::{package_versions_scenario, PACKAGE_TASK_ID, RELEASE_ROWS, NULL_RELEASE_ROWS};
pub use smoke::{smoke_benchmark, SMOKE_SAMPLES};

#[derive(Debug, Error)]
pub enum TestkitError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("sqlite: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Gold(#[from] GoldParseError),
    #[error("fixture {id}: {reason}")]
    Inconsistent { id: String, reason: String },
}

/// A task plus the script that answers it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub task: TaskRecord,
    pub script: ReplayScript,
    pub mode: CompareMode,
    /// The SQL the vote is expected to select.
    pub expected_sql: String,
}

/// What a scripted REFINE says.
#[derive(Debug, Clone)]
pub struct RefineText {
    pub findings: String,
    pub understanding: String,
    pub plan: String,
}

impl RefineText {
    pub fn new(findings: &str, understanding: &str, plan: &str) -> Self {
        Self {
            findings: findings.into(),
            understanding: understanding.into(),
            plan: plan.into(),
        }
    }

    pub fn action(&self) -> String {
        format!(
            "[REFINE]\n### Findings from Exploration:\n{}\n### Updated Understanding:\n{}\n### Query Plan:\n{}\n### Next Action:\n- [Generate SQL]",
            self.findings, self.understanding, self.plan
        )
    }
}

pub fn explore_action(queries: &[&str]) -> String {
    let body: Vec<String> = queries
        .iter()
        .map(|q| format!("{};", q.trim().trim_end_matches(';')))
        .collect();
    format!("[EXPLORE]\n```sql\n{}\n```", body.join("\n"))
}

pub fn sql_action(sql: &str) -> String {
    format!("[SQL] ```sql\n{}\n```", sql.trim())
}

pub fn confirm_action(text: &str) -> String {
    format!("[CONFIRM] {text}")
}

/// Explore, refine, answer, confirm.
pub fn standard_episode(explore: &[&str], refine: &RefineText, sql: &str) -> Vec<String> {
    vec![
        explore_action(explore),
        refine.action(),
        sql_action(sql),
        confirm_action("The query answers the question."),
    ]
}

/// Inputs for generating the linking part of a script.
#[derive(Debug, Clone)]
pub struct LinkingPlan<'a> {
    pub schema: &'a DatabaseSchema,
    pub config: &'a LinkingConfig,
    pub plan_steps: &'a [&'a str],
    /// Final subset; must contain the gold columns.
    pub keep: &'a BTreeSet<ColumnRef>,
    /// Join check run by the synthesis step before it confirms.
    pub synthesis_probe: Option<&'a str>,
}

fn fenced_json(v: serde_json::Value) -> String {
    format!("```json\n{}\n```", serde_json::to_string_pretty(&v).unwrap_or_default())
}

/// Original-case table name for a normalized one.
fn table_name(schema: &DatabaseSchema, normalized: &str) -> String {
    schema
        .tables
        .iter()
        .find(|t| normalize_ident(&t.name) == normalized)
        .map(|t| t.name.clone())
        .unwrap_or_else(|| normalized.to_string())
}

fn column_name(schema: &DatabaseSchema, r: &ColumnRef) -> String {
    schema
        .resolve(r)
        .map(|(_, c)| c.name.clone())
        .unwrap_or_else(|| r.column.clone())
}

/// Replay entries for one linking run that ends at `keep`.
pub fn linking_entries(p: &LinkingPlan<'_>) -> Vec<ReplayEntry> {
    let mut out = Vec::new();
    let steps: Vec<String> = p
        .plan_steps
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {s}", i + 1))
        .collect();
    for _ in 0..p.config.plan_samples.max(1) {
        out.push(ReplayEntry::new("sl_plan", fenced_json(json!({ "logical_steps": steps }))));
    }
    out.push(ReplayEntry::new("sl_agg", steps.join("\n")));

    let mut by_table: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in p.keep {
        by_table
            .entry(r.table.clone())
            .or_default()
            .push(column_name(p.schema, r));
    }
    let batches = partition_batches(
        merge_identical_tables(p.schema),
        p.config.min_batch_tokens,
        p.config.max_batch_tokens,
        &ByteEstimator,
    );
    for b in &batches {
        let members: Vec<&String> = b.entries.iter().flat_map(|e| e.members.iter()).collect();
        let drop: Vec<&String> = members
            .iter()
            .copied()
            .filter(|m| !by_table.contains_key(&normalize_ident(m)))
            .collect();
        let keep: Vec<serde_json::Value> = members
            .iter()
            .filter_map(|m| {
                by_table
                    .get(&normalize_ident(m))
                    .map(|cols| json!({ "table": m, "columns": cols }))
            })
            .collect();
        out.push(ReplayEntry::new(
            "sl_del",
            fenced_json(json!({ "obviously_irrelevant_tables": drop, "obviously_irrelevant_columns": [] })),
        ));
        out.push(ReplayEntry::new(
            "sl_sel",
            fenced_json(json!({ "relevant_tables": [], "relevant_columns": keep })),
        ));
    }

    let roles: serde_json::Map<String, serde_json::Value> = by_table
        .keys()
        .map(|t| {
            let name = table_name(p.schema, t);
            (name.clone(), json!(format!("Target table: {name} holds columns the question needs.")))
        })
        .collect();
    out.push(ReplayEntry::new(
        "sl_semantics",
        fenced_json(json!({
            "database_structure": format!("Database {} with {} tables.", p.schema.name, p.schema.tables.len()),
            "query_specific_content_analysis": "The question maps onto the kept tables.",
            "table_functions": roles,
        })),
    ));

    for (t, cols) in &by_table {
        let name = table_name(p.schema, t);
        let q = format!("SELECT * FROM \"{name}\" LIMIT 3;");
        out.push(
            ReplayEntry::new("sl_exp_sql", format!("```sql\n-- Motivation: sample rows\n{q}\n```"))
                .containing(format!("TARGET TABLE: {name} ***")),
        );
        let relevant: Vec<serde_json::Value> = cols
            .iter()
            .map(|c| json!({ "column_name": c, "relevance_reason": "Needed by the question", "observations": "populated" }))
            .collect();
        out.push(
            ReplayEntry::new(
                "sl_exp_verdict",
                fenced_json(json!({
                    "relevant": true,
                    "relevant_columns": relevant,
                    "table_summary": format!("{name} rows"),
                })),
            )
            .containing(format!("determine if table `{name}` is RELEVANT")),
        );
    }

    let refined: serde_json::Map<String, serde_json::Value> = by_table
        .iter()
        .map(|(t, cols)| {
            let list: Vec<serde_json::Value> = cols
                .iter()
                .map(|c| json!({ "column_name": c, "relevance_reason": "Needed by the question" }))
                .collect();
            (table_name(p.schema, t), json!({ "relevant_columns": list }))
        })
        .collect();
    if let Some(probe) = p.synthesis_probe {
        out.push(ReplayEntry::new(
            "sl_final",
            fenced_json(json!({
                "refined_schema": refined,
                "rejected_candidates": [],
                "exploration_queries": [probe],
                "status": "EXPLORING",
            })),
        ));
    }
    out.push(ReplayEntry::new(
        "sl_final",
        fenced_json(json!({
            "refined_schema": refined,
            "rejected_candidates": [],
            "exploration_queries": [],
            "status": "[CONFIRM]",
        })),
    ));
    out
}

/// Realized-plan answer for the keyword step.
pub fn realization_entry(plan_steps: &[&str], keywords: &[String]) -> ReplayEntry {
    let text: Vec<String> = plan_steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            format!(
                "Step {}: {s}\n  - Info need: {s}\n  - Possible paths: 'direct columns'\n  - Keywords: {}",
                i + 1,
                keywords.join(", ")
            )
        })
        .collect();
    ReplayEntry::new("sql_kw", text.join("\n\n"))
}

/// Agent entries, one tag per sample.
pub fn episode_entries(samples: &[Vec<String>]) -> Vec<ReplayEntry> {
    samples
        .iter()
        .enumerate()
        .flat_map(|(k, actions)| {
            actions
                .iter()
                .map(move |a| ReplayEntry::new(format!("{}@{k}", crate::agent::STEP_TAG), a.clone()))
        })
        .collect()
}

/// Runs `sql` read-only against the fixture.
pub fn run(db: &Database, sql: &str) -> Result<ResultSet, ExecError> {
    db.execute(sql, &ExecOptions::read_only())
}

/// Fails unless `pred` and `gold` agree under `mode` on `db`.
pub fn check_equivalent(
    id: &str,
    db: &Database,
    pred: &str,
    gold: &str,
    mode: CompareMode,
) -> Result<(), TestkitError> {
    let p = run(db, pred)?;
    let g = run(db, gold)?;
    if compare(&p, &g, mode) {
        Ok(())
    } else {
        Err(TestkitError::Inconsistent {
            id: id.into(),
            reason: format!("scripted answer does not match gold:\n{}\nvs\n{}", p.render(), g.render()),
        })
    }
}

/// Gold columns of `gold_sql`, failing on anything unresolved.
pub fn gold_columns(
    id: &str,
    schema: &DatabaseSchema,
    gold_sql: &str,
) -> Result<BTreeSet<ColumnRef>, TestkitError> {
    let g = extract_gold_columns(gold_sql, schema)?;
    if !g.unresolved.is_empty() {
        return Err(TestkitError::Inconsistent {
            id: id.into(),
            reason: format!("unresolved gold references: {:?}", g.unresolved),
        });
    }
    Ok(g.refs)
}

pub fn load_fixture_schema(path: &Path) -> Result<DatabaseSchema, TestkitError> {
    Ok(load_schema(&SchemaSource::Sqlite(path.to_path_buf()))?)
}

/// Pipeline settings the fixtures are scripted against.
pub fn fixture_config(samples: usize) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.generation.samples = samples;
    c
}

/// Writes `tasks.json`, one replay script per task under `replay/`, and
/// returns the tasks file path.
pub fn write_bundle(dir: &Path, scenarios: &[Scenario]) -> Result<PathBuf, TestkitError> {
    let replay = dir.join("replay");
    std::fs::create_dir_all(&replay)?;
    for s in scenarios {
        std::fs::write(replay.join(format!("{}.json", s.task.question_id)), s.script.to_json())?;
    }
    let tasks: Vec<&TaskRecord> = scenarios.iter().map(|s| &s.task).collect();
    let path = dir.join("tasks.json");
    std::fs::write(&path, serde_json::to_string_pretty(&tasks).unwrap_or_default())?;
    Ok(path)
}
