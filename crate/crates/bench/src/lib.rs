//! Synthetic inputs shared by the benchmarks.

use std::collections::BTreeSet;

use apexsql_core::exec::Value;
use apexsql_core::guidance::MatchInput;
use apexsql_core::linking::PruneDecision;
use apexsql_core::schema::{Column, ColumnRef, MergedEntry, SchemaBatch};
use apexsql_core::{ResultSet, Table};

/// `batches` batches of `tables` tables with `columns` columns each, plus a
/// decision per batch deleting every third column and keeping every fifth.
pub fn pruning_case(batches: usize, tables: usize, columns: usize) -> (Vec<SchemaBatch>, Vec<PruneDecision>) {
    let mut out = Vec::with_capacity(batches);
    let mut decisions = Vec::with_capacity(batches);
    for b in 0..batches {
        let mut entries = Vec::with_capacity(tables);
        let mut del = BTreeSet::new();
        let mut keep = BTreeSet::new();
        for t in 0..tables {
            let name = format!("t{b}_{t}");
            let cols: Vec<Column> = (0..columns).map(|c| Column::new(format!("c{c}"), "TEXT")).collect();
            for c in 0..columns {
                let r = ColumnRef::new(&name, format!("c{c}"));
                if c % 3 == 0 {
                    del.insert(r.clone());
                }
                if c % 5 == 0 {
                    keep.insert(r);
                }
            }
            entries.push(MergedEntry { representative: Table::new(&name, cols), members: vec![name] });
        }
        out.push(SchemaBatch { entries, token_estimate: 0 });
        decisions.push(PruneDecision { batch_id: b, deletion_set: del, preservation_set: keep });
    }
    (out, decisions)
}

/// Integer, real, text and nullable columns over `rows` rows.
pub fn mixed_result(rows: usize, seed: i64) -> ResultSet {
    let data = (0..rows as i64)
        .map(|i| {
            let k = (i * 7919 + seed) % 1009;
            vec![
                Value::Integer(k),
                Value::Real(k as f64 / 8.0),
                Value::Text(format!("name-{}", k % 97)),
                if k % 11 == 0 { Value::Null } else { Value::Integer(k % 13) },
            ]
        })
        .collect();
    ResultSet::from_rows(&["id", "score", "label", "bucket"], data)
}

pub fn rule_input() -> MatchInput {
    MatchInput {
        question: "What is the average rating of the top 3 products per category launched after 2019, \
                   and what percentage of reviews mention 'battery'?"
            .into(),
        evidence: "average rating refers to AVG(rating); launched after 2019 refers to year > 2019; \
                   percentage = DIVIDE(COUNT(review_id where text LIKE '%battery%'), COUNT(review_id)) * 100"
            .into(),
        plan: "Step 1: filter products by launch year\nStep 2: rank products per category\n\
               Step 3: average ratings of the top three\nStep 4: compute the share of reviews mentioning battery"
            .into(),
        plan_steps: 4,
        tables: vec!["products".into(), "reviews".into(), "categories".into()],
        columns: vec![
            "products.launch_date".into(),
            "products.category_id".into(),
            "reviews.rating".into(),
            "reviews.text".into(),
        ],
    }
}
