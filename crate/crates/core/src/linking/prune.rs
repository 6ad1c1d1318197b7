//! Two independent passes per schema batch: one names what is certainly
//! irrelevant, the other what is needed. Fusion keeps anything either pass
//! does not confidently remove.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::LogicalPlan;
use crate::llm::{extract_json_object, parsed_or_fallback, ChatRequest, ExtractError, Gateway, GatewayError};
use crate::prompts::{Prompts, Template};
use crate::schema::{normalize_ident, ColumnRef, RenderStyle, SchemaBatch, SchemaSubset};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneDecision {
    pub batch_id: usize,
    pub deletion_set: BTreeSet<ColumnRef>,
    pub preservation_set: BTreeSet<ColumnRef>,
}

/// Table-level and column-level names from one pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NamedElements {
    pub tables: Vec<String>,
    pub columns: Vec<(String, Vec<String>)>,
}

fn string_list(v: Option<&Json>) -> Vec<String> {
    match v {
        Some(Json::Array(items)) => items
            .iter()
            .filter_map(|i| match i {
                Json::String(s) => Some(s.clone()),
                Json::Object(o) => o
                    .get("table")
                    .or_else(|| o.get("name"))
                    .and_then(Json::as_str)
                    .map(str::to_string),
                _ => None,
            })
            .collect(),
        Some(Json::String(s)) => vec![s.clone()],
        _ => Vec::new(),
    }
}

fn column_lists(v: Option<&Json>) -> Result<Vec<(String, Vec<String>)>, ExtractError> {
    let mut out = Vec::new();
    match v {
        None | Some(Json::Null) => {}
        Some(Json::Array(items)) => {
            for item in items {
                match item {
                    Json::Object(o) => {
                        let table = o
                            .get("table")
                            .and_then(Json::as_str)
                            .ok_or_else(|| ExtractError::ParseFailure("column entry without table".into()))?;
                        out.push((table.to_string(), string_list(o.get("columns"))));
                    }
                    // "table.column" strings
                    Json::String(s) => {
                        if let Some(r) = ColumnRef::parse(s) {
                            out.push((r.table, vec![r.column]));
                        }
                    }
                    _ => return Err(ExtractError::ParseFailure("unexpected column entry".into())),
                }
            }
        }
        // {"table": ["col", ...]}
        Some(Json::Object(o)) => {
            for (table, cols) in o {
                out.push((table.clone(), string_list(Some(cols))));
            }
        }
        Some(_) => return Err(ExtractError::ParseFailure("column list has the wrong shape".into())),
    }
    Ok(out)
}

fn parse_named(content: &str, tables_key: &str, columns_key: &str) -> Result<NamedElements, ExtractError> {
    let v = extract_json_object(content)?;
    if v.get(tables_key).is_none() && v.get(columns_key).is_none() {
        return Err(ExtractError::ParseFailure(format!(
            "expected {tables_key} or {columns_key}"
        )));
    }
    Ok(NamedElements {
        tables: string_list(v.get(tables_key)),
        columns: column_lists(v.get(columns_key))?,
    })
}

pub fn parse_deletion(content: &str) -> Result<NamedElements, ExtractError> {
    parse_named(content, "obviously_irrelevant_tables", "obviously_irrelevant_columns")
}

pub fn parse_selection(content: &str) -> Result<NamedElements, ExtractError> {
    parse_named(content, "relevant_tables", "relevant_columns")
}

/// Resolves named tables and columns against the batch. A table named in a
/// merged group affects only that member; names outside the batch are
/// dropped with a warning.
pub fn expand_named(batch: &SchemaBatch, named: &NamedElements) -> BTreeSet<ColumnRef> {
    let member_of = |name: &str| {
        let key = normalize_ident(name);
        batch.entries.iter().find_map(|e| {
            e.members
                .iter()
                .find(|m| normalize_ident(m) == key)
                .map(|m| (e, m.clone()))
        })
    };
    let mut out = BTreeSet::new();
    for t in &named.tables {
        match member_of(t) {
            Some((entry, member)) => {
                out.extend(entry.representative.columns.iter().map(|c| ColumnRef::new(&member, &c.name)));
            }
            None => log::warn!("pruning named table {t:?} outside the batch; ignored"),
        }
    }
    for (t, cols) in &named.columns {
        let Some((entry, member)) = member_of(t) else {
            log::warn!("pruning named table {t:?} outside the batch; ignored");
            continue;
        };
        for c in cols {
            // tolerate "table.column" inside a table's list
            let col = ColumnRef::parse(c)
                .filter(|r| normalize_ident(&r.table) == normalize_ident(&member))
                .map(|r| r.column)
                .unwrap_or_else(|| c.clone());
            match entry.representative.column(&col) {
                Some(found) => {
                    out.insert(ColumnRef::new(&member, &found.name));
                }
                None => log::warn!("pruning named column {t}.{c} outside the batch; ignored"),
            }
        }
    }
    out
}

/// Every column the batch stands for, merged members included.
pub fn batch_columns(batch: &SchemaBatch) -> BTreeSet<ColumnRef> {
    batch
        .entries
        .iter()
        .flat_map(|e| {
            e.members.iter().flat_map(move |m| {
                e.representative
                    .columns
                    .iter()
                    .map(move |c| ColumnRef::new(m, &c.name))
            })
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn prune_batch(
    gateway: &Gateway,
    prompts: &Prompts,
    question: &str,
    evidence: &str,
    plan: &LogicalPlan,
    batch: &SchemaBatch,
    batch_id: usize,
    retries: usize,
    max_output_tokens: u64,
) -> Result<PruneDecision, GatewayError> {
    let plan_text = plan.render();
    let schema_text = batch.render(RenderStyle::Full);
    let slots = [
        ("question", question),
        ("plan", plan_text.as_str()),
        ("schema", schema_text.as_str()),
        ("evidence", evidence),
    ];
    let pass = |template: Template, parse: fn(&str) -> Result<NamedElements, ExtractError>| {
        let prompt = prompts
            .render(template, &slots)
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let req = ChatRequest::user_prompt(template.name(), prompt, 0.0, max_output_tokens);
        Ok::<_, GatewayError>(
            parsed_or_fallback(gateway.complete_parsed(&req, retries, parse))?
                .map(|named| expand_named(batch, &named))
                .unwrap_or_default(),
        )
    };
    let deletion_set = pass(Template::Delete, parse_deletion)?;
    let preservation_set = pass(Template::Select, parse_selection)?;
    Ok(PruneDecision {
        batch_id,
        deletion_set,
        preservation_set,
    })
}

/// Union over batches of `(batch \ deleted) ∪ kept`.
pub fn fuse_pruned(batches: &[SchemaBatch], decisions: &[PruneDecision]) -> SchemaSubset {
    let mut out = SchemaSubset::default();
    for (i, batch) in batches.iter().enumerate() {
        let cols = batch_columns(batch);
        let decision = decisions.iter().find(|d| d.batch_id == i);
        for c in &cols {
            let deleted = decision.is_some_and(|d| d.deletion_set.contains(c));
            let kept = decision.is_some_and(|d| d.preservation_set.contains(c));
            if !deleted || kept {
                out.insert(c.clone());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linking::PlanSource;
    use crate::llm::{ReplayEntry, ReplayScript};
    use crate::schema::{Column, DatabaseSchema, MergedEntry, Table};
    use proptest::prelude::*;

    fn table(name: &str, cols: &[&str]) -> Table {
        Table::new(name, cols.iter().map(|c| Column::new(*c, "TEXT")).collect())
    }

    fn single(t: Table) -> MergedEntry {
        MergedEntry {
            members: vec![t.name.clone()],
            representative: t,
        }
    }

    fn batch(entries: Vec<MergedEntry>) -> SchemaBatch {
        SchemaBatch {
            entries,
            token_estimate: 0,
        }
    }

    fn plan() -> LogicalPlan {
        LogicalPlan {
            steps: vec!["x".into()],
            source: PlanSource::Master,
        }
    }

    fn run(b: &SchemaBatch, del: &str, sel: &str) -> PruneDecision {
        let gw = Gateway::replay(ReplayScript::new(vec![
            ReplayEntry::new("sl_del", del),
            ReplayEntry::new("sl_sel", sel),
        ]));
        let d = prune_batch(&gw, &Prompts::default(), "q", "", &plan(), b, 0, 0, 4000).unwrap();
        assert_eq!(gw.trace_len(), 2);
        d
    }

    #[test]
    fn whole_table_deletion_expands() {
        let b = batch(vec![single(table("t1", &["a", "b", "c"])), single(table("t2", &["d"]))]);
        let d = run(&b, r#"{"obviously_irrelevant_tables": ["t1"], "obviously_irrelevant_columns": []}"#, "{}");
        assert_eq!(d.deletion_set.len(), 3);
        assert!(d.preservation_set.is_empty());
    }

    #[test]
    fn merged_group_member_only() {
        let rep = table("sales_2017", &["id", "amount"]);
        let entry = MergedEntry {
            representative: rep,
            members: vec!["sales_2017".into(), "sales_2018".into()],
        };
        let b = batch(vec![entry]);
        let d = run(&b, r#"{"obviously_irrelevant_tables": ["sales_2017"]}"#, "garbage");
        assert_eq!(
            d.deletion_set,
            [ColumnRef::new("sales_2017", "id"), ColumnRef::new("sales_2017", "amount")].into()
        );
        let fused = fuse_pruned(&[b], &[d]);
        assert_eq!(fused.table_names().into_iter().collect::<Vec<_>>(), vec!["sales_2018"]);
    }

    #[test]
    fn garbage_deletion_preserves_batch() {
        let b = batch(vec![single(table("t1", &["a", "b"]))]);
        let d = run(&b, "I cannot help", "nope");
        assert!(d.deletion_set.is_empty());
        assert_eq!(fuse_pruned(&[b], &[d]).len(), 2);
    }

    #[test]
    fn out_of_batch_names_dropped() {
        let b = batch(vec![single(table("t1", &["a", "b"]))]);
        let d = run(
            &b,
            r#"{"obviously_irrelevant_columns": [{"table": "t1", "columns": ["a", "zz"]}, {"table": "nope", "columns": ["a"]}]}"#,
            r#"{"relevant_tables": [], "relevant_columns": ["t1.b", "other.c"]}"#,
        );
        assert_eq!(d.deletion_set, [ColumnRef::new("t1", "a")].into());
        assert_eq!(d.preservation_set, [ColumnRef::new("t1", "b")].into());
    }

    #[test]
    fn ambiguous_column_is_kept() {
        let b = batch(vec![single(table("t", &["x", "y"]))]);
        let d = PruneDecision {
            batch_id: 0,
            deletion_set: [ColumnRef::new("t", "x"), ColumnRef::new("t", "y")].into(),
            preservation_set: [ColumnRef::new("t", "x")].into(),
        };
        let fused = fuse_pruned(&[b], &[d]);
        assert_eq!(fused.refs().iter().cloned().collect::<Vec<_>>(), vec![ColumnRef::new("t", "x")]);
    }

    #[test]
    fn ten_columns_four_deleted_one_rescued() {
        let names: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
        let cols: Vec<&str> = names.iter().map(String::as_str).collect();
        let b = batch(vec![single(table("t", &cols))]);
        let d = PruneDecision {
            batch_id: 0,
            deletion_set: (0..4).map(|i| ColumnRef::new("t", format!("c{i}"))).collect(),
            preservation_set: [ColumnRef::new("t", "c2")].into(),
        };
        // 10 - 4 + 1 by hand
        assert_eq!(fuse_pruned(&[b], &[d]).len(), 7);
    }

    #[test]
    fn empty_decisions_are_identity() {
        let schema = DatabaseSchema::new(
            "db",
            vec![table("a", &["x", "y"]), table("b", &["z"])],
        )
        .unwrap();
        let b = batch(schema.tables.iter().cloned().map(single).collect());
        let d = PruneDecision::default();
        assert_eq!(fuse_pruned(&[b], &[d]), SchemaSubset::full(&schema));
    }

    proptest! {
        #[test]
        fn fusion_matches_set_algebra(
            sizes in proptest::collection::vec(1usize..8, 1..5),
            seed_del in any::<u64>(),
            seed_keep in any::<u64>(),
        ) {
            let batches: Vec<SchemaBatch> = sizes
                .iter()
                .enumerate()
                .map(|(i, n)| {
                    let names: Vec<String> = (0..*n).map(|c| format!("c{c}")).collect();
                    let cols: Vec<&str> = names.iter().map(String::as_str).collect();
                    batch(vec![single(table(&format!("t{i}"), &cols))])
                })
                .collect();
            let mut decisions = Vec::new();
            let mut expected = BTreeSet::new();
            let mut bit = 0u32;
            for (i, b) in batches.iter().enumerate() {
                let cols: Vec<ColumnRef> = batch_columns(b).into_iter().collect();
                let mut del = BTreeSet::new();
                let mut keep = BTreeSet::new();
                for c in &cols {
                    let in_del = (seed_del.rotate_left(bit) & 1) == 1;
                    let in_keep = (seed_keep.rotate_left(bit) & 1) == 1;
                    bit += 1;
                    if in_del { del.insert(c.clone()); }
                    if in_keep { keep.insert(c.clone()); }
                }
                let all: BTreeSet<ColumnRef> = cols.iter().cloned().collect();
                let survived: BTreeSet<ColumnRef> = all.difference(&del).cloned().collect();
                expected.extend(survived.union(&keep).cloned());
                decisions.push(PruneDecision { batch_id: i, deletion_set: del, preservation_set: keep });
            }
            let fused = fuse_pruned(&batches, &decisions);
            prop_assert_eq!(fused.refs(), &expected);
        }
    }
}
