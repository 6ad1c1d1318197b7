//! Random batches with deletion and preservation sets, and the fused
//! subset computed straight from the set formula.

use std::collections::BTreeSet;

use apexsql_core::linking::PruneDecision;
use apexsql_core::schema::{Column, ColumnRef, MergedEntry, SchemaBatch, Table};
use proptest::prelude::*;

#[derive(Debug, Clone)]
pub struct Case {
    pub batches: Vec<SchemaBatch>,
    pub decisions: Vec<PruneDecision>,
    /// Columns of each batch, listed from the generated names.
    pub columns: Vec<BTreeSet<ColumnRef>>,
}

/// Per table: member count and column count. Per column: membership in the
/// deletion set and in the preservation set.
type RawBatch = Vec<(usize, Vec<(bool, bool)>)>;

fn raw_case() -> impl Strategy<Value = (Vec<RawBatch>, Vec<bool>, u64)> {
    let table = (1usize..=3, prop::collection::vec((any::<bool>(), any::<bool>()), 1..6));
    let batch = prop::collection::vec(table, 1..4);
    (
        prop::collection::vec(batch, 1..5),
        prop::collection::vec(any::<bool>(), 5),
        any::<u64>(),
    )
}

fn build((raw, has_decision, shuffle): (Vec<RawBatch>, Vec<bool>, u64)) -> Case {
    let mut batches = Vec::new();
    let mut decisions = Vec::new();
    let mut columns = Vec::new();
    for (b, tables) in raw.iter().enumerate() {
        let mut entries = Vec::new();
        let mut all = BTreeSet::new();
        let mut del = BTreeSet::new();
        let mut keep = BTreeSet::new();
        for (t, (members, cols)) in tables.iter().enumerate() {
            let names: Vec<String> = (0..*members).map(|m| format!("b{b}_t{t}_m{m}")).collect();
            let table = Table::new(
                names[0].clone(),
                (0..cols.len()).map(|c| Column::new(format!("c{c}"), "TEXT")).collect(),
            );
            for name in &names {
                for (c, (d, k)) in cols.iter().enumerate() {
                    let r = ColumnRef { table: name.clone(), column: format!("c{c}") };
                    all.insert(r.clone());
                    if *d {
                        del.insert(r.clone());
                    }
                    if *k {
                        keep.insert(r);
                    }
                }
            }
            entries.push(MergedEntry { representative: table, members: names });
        }
        batches.push(SchemaBatch { entries, token_estimate: 0 });
        if has_decision[b] {
            decisions.push(PruneDecision { batch_id: b, deletion_set: del, preservation_set: keep });
        }
        columns.push(all);
    }
    // decision order must not matter
    if !decisions.is_empty() {
        let r = (shuffle as usize) % decisions.len();
        decisions.rotate_left(r);
    }
    Case { batches, decisions, columns }
}

pub fn case() -> impl Strategy<Value = Case> {
    raw_case().prop_map(build)
}

/// Union over batches of `(B \ Del) ∪ Keep`; a batch without a decision
/// keeps everything.
pub fn expected(case: &Case) -> BTreeSet<ColumnRef> {
    let mut out = BTreeSet::new();
    for (i, all) in case.columns.iter().enumerate() {
        let (del, keep) = match case.decisions.iter().find(|d| d.batch_id == i) {
            Some(d) => (d.deletion_set.clone(), d.preservation_set.clone()),
            None => (BTreeSet::new(), BTreeSet::new()),
        };
        let kept: BTreeSet<ColumnRef> = all.difference(&del).cloned().collect();
        out.extend(kept.union(&keep).cloned());
    }
    out
}

/// Whether some column sits in both sets of its batch.
pub fn has_overlap(case: &Case) -> bool {
    case.decisions
        .iter()
        .any(|d| d.deletion_set.intersection(&d.preservation_set).next().is_some())
}
