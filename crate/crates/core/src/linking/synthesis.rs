//! Global review of the profiling results: the model may run join checks
//! for a few rounds, then commits to the final column set.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::{LinkingConfig, RoleAnalysis, TableObservation};
use crate::exec::Database;
use crate::llm::{
    extract_json_object, parsed_or_fallback, ChatRequest, ExtractError, Gateway, GatewayError,
};
use crate::prompts::{Prompts, Template};
use crate::schema::{normalize_ident, Annotation, ColumnRef, DatabaseSchema, SchemaSubset};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub table: String,
    pub column: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOutcome {
    pub subset: SchemaSubset,
    pub rejected: Vec<Rejection>,
    /// Columns put back because profiling kept them and synthesis dropped
    /// them without a rejection entry.
    pub readded: Vec<ColumnRef>,
    pub rounds: usize,
    pub confirmed: bool,
    /// False when no parseable refined schema ever appeared.
    pub refined: bool,
}

#[derive(Debug, Clone)]
struct RoundAnswer {
    refined: Option<BTreeMap<ColumnRef, String>>,
    rejected: Vec<Rejection>,
    queries: Vec<String>,
    confirm: bool,
}

fn column_entries(v: &Json) -> Vec<(String, String)> {
    let list = match v {
        Json::Object(o) => o.get("relevant_columns").or_else(|| o.get("columns")).cloned().unwrap_or(Json::Null),
        other => other.clone(),
    };
    let Json::Array(items) = list else {
        return Vec::new();
    };
    items
        .iter()
        .filter_map(|i| match i {
            Json::String(s) => Some((s.clone(), String::new())),
            Json::Object(o) => {
                let name = o
                    .get("column_name")
                    .or_else(|| o.get("column"))
                    .or_else(|| o.get("name"))
                    .and_then(Json::as_str)?;
                let reason = o
                    .get("relevance_reason")
                    .or_else(|| o.get("reason"))
                    .and_then(Json::as_str)
                    .unwrap_or_default();
                Some((name.to_string(), reason.to_string()))
            }
            _ => None,
        })
        .collect()
}

fn parse_round(content: &str) -> Result<RoundAnswer, ExtractError> {
    let v = extract_json_object(content)?;
    let refined = match v.get("refined_schema") {
        Some(Json::Object(tables)) => Some(
            tables
                .iter()
                .flat_map(|(t, spec)| {
                    column_entries(spec)
                        .into_iter()
                        .map(move |(c, reason)| (ColumnRef::new(t, &c), reason))
                })
                .collect::<BTreeMap<_, _>>(),
        ),
        _ => None,
    };
    let rejected = match v.get("rejected_candidates") {
        Some(Json::Array(items)) => items
            .iter()
            .filter_map(|i| {
                let table = i.get("table")?.as_str()?;
                let column = i.get("column").or_else(|| i.get("column_name"))?.as_str()?;
                let reason = i
                    .get("reject_reason")
                    .or_else(|| i.get("reason"))
                    .and_then(Json::as_str)
                    .unwrap_or_default();
                Some(Rejection {
                    table: normalize_ident(table),
                    column: normalize_ident(column),
                    reason: reason.to_string(),
                })
            })
            .collect(),
        _ => Vec::new(),
    };
    let queries: Vec<String> = match v.get("exploration_queries") {
        Some(Json::Array(items)) => items
            .iter()
            .filter_map(Json::as_str)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect(),
        Some(Json::String(s)) if !s.trim().is_empty() => vec![s.trim().to_string()],
        _ => Vec::new(),
    };
    let status = v.get("status").and_then(Json::as_str).unwrap_or_default();
    let confirm = status.to_ascii_uppercase().contains("CONFIRM")
        || content.contains("[CONFIRM]")
        || (refined.is_some() && queries.is_empty());
    if refined.is_none() && queries.is_empty() && !confirm {
        return Err(ExtractError::ParseFailure(
            "answer has neither refined_schema nor exploration_queries".into(),
        ));
    }
    Ok(RoundAnswer {
        refined,
        rejected,
        queries,
        confirm,
    })
}

fn schema_status(schema: &DatabaseSchema, pruned: &SchemaSubset, observations: &[TableObservation]) -> String {
    let mut out = String::new();
    for t in &schema.tables {
        let key = normalize_ident(&t.name);
        let surviving: Vec<&str> = t
            .columns
            .iter()
            .filter(|c| pruned.contains(&ColumnRef::new(&t.name, &c.name)))
            .map(|c| c.name.as_str())
            .collect();
        if surviving.is_empty() {
            continue;
        }
        let obs = observations.iter().find(|o| normalize_ident(&o.table) == key);
        match obs {
            Some(o) if o.relevant => {
                let _ = writeln!(out, "[MARKED RELEVANT] {}: {}", t.name, o.table_summary);
                for c in &o.relevant_columns {
                    let _ = write!(out, "  - {}: {}", c.column, c.reason);
                    if !c.observations.is_empty() {
                        let _ = write!(out, " (observed: {})", c.observations);
                    }
                    out.push('\n');
                }
                let others: Vec<&str> = surviving
                    .iter()
                    .copied()
                    .filter(|s| !o.relevant_columns.iter().any(|c| c.column.eq_ignore_ascii_case(s)))
                    .collect();
                if !others.is_empty() {
                    let _ = writeln!(out, "  other columns: {}", others.join(", "));
                }
            }
            Some(o) => {
                let _ = writeln!(out, "[MARKED IRRELEVANT] {}: {}", t.name, o.table_summary);
                let _ = writeln!(out, "  columns: {}", surviving.join(", "));
            }
            None => {
                let _ = writeln!(out, "[NOT PROFILED] {}", t.name);
                let _ = writeln!(out, "  columns: {}", surviving.join(", "));
            }
        }
    }
    out.trim_end().to_string()
}

/// Profiling reason and observations per relevant column.
fn profiling_notes(observations: &[TableObservation]) -> BTreeMap<ColumnRef, Annotation> {
    let mut out = BTreeMap::new();
    for o in observations.iter().filter(|o| o.relevant) {
        for c in &o.relevant_columns {
            out.entry(ColumnRef::new(&o.table, &c.column)).or_insert_with(|| Annotation {
                reason: c.reason.clone(),
                observations: c.observations.clone(),
            });
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn global_synthesis(
    gateway: &Gateway,
    prompts: &Prompts,
    question: &str,
    evidence: &str,
    roles: &RoleAnalysis,
    observations: &[TableObservation],
    schema: &DatabaseSchema,
    pruned: &SchemaSubset,
    db: &Database,
    config: &LinkingConfig,
) -> Result<SynthesisOutcome, GatewayError> {
    let max_rounds = config.max_refine_rounds.max(1);
    let (retries, max_output_tokens) = (config.parse_retries, config.max_output_tokens);
    let exec = config.exec_options();
    let status = schema_status(schema, pruned, observations);
    let summary = roles.render();
    let rounds_text = max_rounds.to_string();
    let prompt = prompts
        .render(
            Template::FinalSynthesis,
            &[
                ("question", question),
                ("evidence", evidence),
                ("db_summary", &summary),
                ("schema_status", &status),
                ("max_rounds", &rounds_text),
            ],
        )
        .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
    let mut req = ChatRequest::user_prompt(Template::FinalSynthesis.name(), prompt, 0.0, max_output_tokens);

    let mut latest: Option<BTreeMap<ColumnRef, String>> = None;
    let mut rejected: Vec<Rejection> = Vec::new();
    let mut rounds = 0;
    let mut confirmed = false;
    while rounds < max_rounds {
        rounds += 1;
        let answer = parsed_or_fallback(gateway.complete_parsed(&req, retries, |c| {
            parse_round(c).map(|a| (c.to_string(), a))
        }))?;
        let Some((raw, answer)) = answer else {
            log::warn!("synthesis round {rounds} unparseable; finishing");
            break;
        };
        if answer.refined.is_some() {
            latest = answer.refined;
            rejected = answer.rejected;
        } else if !answer.rejected.is_empty() {
            rejected = answer.rejected;
        }
        if answer.confirm || answer.queries.is_empty() {
            confirmed = answer.confirm;
            break;
        }
        if rounds == max_rounds {
            log::info!("synthesis reached {max_rounds} rounds; forcing finish");
            break;
        }
        let mut feedback = String::from("Exploration results:\n");
        for (i, sql) in answer.queries.iter().take(config.profile_query_cap).enumerate() {
            let outcome = db.explore(sql, &exec);
            let _ = write!(
                feedback,
                "Query {}:\n```sql\n{}\n```\nResult:\n{}\n\n",
                i + 1,
                sql,
                outcome.render().trim_end()
            );
        }
        let _ = write!(
            feedback,
            "Round {} of {} used. Continue the refinement in the same JSON format.",
            rounds, max_rounds
        );
        req = req.assistant(raw).user(feedback);
    }

    let notes = profiling_notes(observations);
    let mut subset = SchemaSubset::default();
    let mut readded = Vec::new();
    let refined = latest.is_some();
    match latest {
        Some(cols) => {
            for (r, reason) in cols {
                if !pruned.contains(&r) {
                    log::warn!("synthesis selected {r}, which is not in the pruned schema; dropped");
                    continue;
                }
                let observed = notes.get(&r).map(|a| a.observations.clone()).unwrap_or_default();
                subset.insert(r.clone());
                subset.annotate(
                    &r,
                    Annotation {
                        reason,
                        observations: observed,
                    },
                );
            }
            let rejected_refs: BTreeSet<ColumnRef> = rejected
                .iter()
                .map(|x| ColumnRef::new(&x.table, &x.column))
                .collect();
            for (r, note) in &notes {
                if !subset.contains(r) && !rejected_refs.contains(r) && pruned.contains(r) {
                    subset.insert(r.clone());
                    subset.annotate(r, note.clone());
                    readded.push(r.clone());
                }
            }
        }
        None => {
            for (r, note) in &notes {
                if pruned.contains(r) {
                    subset.insert(r.clone());
                    subset.annotate(r, note.clone());
                }
            }
        }
    }
    if subset.is_empty() {
        log::warn!("synthesis produced no columns; keeping the pruned schema");
        subset = pruned.clone();
    }
    Ok(SynthesisOutcome {
        subset,
        rejected,
        readded,
        rounds,
        confirmed,
        refined,
    })
}
