use std::collections::HashMap;

use serde::Serialize;

use super::render::render_table;
use super::{normalize_ident, DatabaseSchema, RenderStyle, Table};
use crate::tokens::TokenEstimator;

pub const DEFAULT_MIN_BATCH_TOKENS: u64 = 8000;
pub const DEFAULT_MAX_BATCH_TOKENS: u64 = 12000;

/// One table standing in for every table that shares its exact layout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergedEntry {
    pub representative: Table,
    /// Names of all tables in the group, representative first.
    pub members: Vec<String>,
}

impl MergedEntry {
    pub fn is_merged(&self) -> bool {
        self.members.len() > 1
    }

    pub fn render(&self, style: RenderStyle) -> String {
        render_table(&self.representative, style, &self.members)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemaBatch {
    pub entries: Vec<MergedEntry>,
    pub token_estimate: u64,
}

impl SchemaBatch {
    pub fn render(&self, style: RenderStyle) -> String {
        self.entries
            .iter()
            .map(|e| e.render(style))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn layout_key(table: &Table) -> Vec<(String, String)> {
    let mut key: Vec<(String, String)> = table
        .columns
        .iter()
        .map(|c| (normalize_ident(&c.name), c.data_type.clone()))
        .collect();
    key.sort();
    key
}

/// Groups tables whose (column name, declared type) multisets are equal.
/// Groups appear in the order of their first table.
pub fn merge_identical_tables(schema: &DatabaseSchema) -> Vec<MergedEntry> {
    let mut index: HashMap<Vec<(String, String)>, usize> = HashMap::new();
    let mut out: Vec<MergedEntry> = Vec::new();
    for t in &schema.tables {
        let key = layout_key(t);
        match index.get(&key) {
            Some(&i) => out[i].members.push(t.name.clone()),
            None => {
                index.insert(key, out.len());
                out.push(MergedEntry {
                    representative: t.clone(),
                    members: vec![t.name.clone()],
                });
            }
        }
    }
    out
}

/// Packs sized items into consecutive groups without reordering or
/// splitting. A group closes once it reaches `min` or when the next item
/// would push it past `max`; an item larger than `max` gets its own group.
pub fn partition_sized<T>(items: Vec<(T, u64)>, min: u64, max: u64) -> Vec<(Vec<T>, u64)> {
    let mut out = Vec::new();
    let mut cur: Vec<T> = Vec::new();
    let mut cur_size = 0u64;
    for (item, size) in items {
        if !cur.is_empty() && cur_size + size > max {
            out.push((std::mem::take(&mut cur), cur_size));
            cur_size = 0;
        }
        cur.push(item);
        cur_size += size;
        if cur_size >= min || cur_size > max {
            out.push((std::mem::take(&mut cur), cur_size));
            cur_size = 0;
        }
    }
    if !cur.is_empty() {
        out.push((cur, cur_size));
    }
    out
}

pub fn partition_batches(
    entries: Vec<MergedEntry>,
    min_tokens: u64,
    max_tokens: u64,
    estimator: &dyn TokenEstimator,
) -> Vec<SchemaBatch> {
    let sized = entries
        .into_iter()
        .map(|e| {
            let n = estimator.estimate(&e.render(RenderStyle::Full));
            (e, n)
        })
        .collect();
    partition_sized(sized, min_tokens, max_tokens.max(min_tokens))
        .into_iter()
        .map(|(entries, token_estimate)| SchemaBatch {
            entries,
            token_estimate,
        })
        .collect()
}
