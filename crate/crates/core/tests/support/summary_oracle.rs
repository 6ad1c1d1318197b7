//! Random result sets and column statistics recomputed by brute force.

use apexsql_core::exec::{ColumnStats, Value, SUMMARY_THRESHOLD};
use apexsql_core::ResultSet;
use proptest::prelude::*;

#[derive(Debug, Clone, Copy)]
enum Kind {
    Int,
    Real,
    Numeric,
    Text,
    Mixed,
}

fn cell(kind: Kind) -> BoxedStrategy<Value> {
    let int = (-6i64..6).prop_map(Value::Integer);
    // quarter steps so whole numbers collide with integers
    let real = (-24i32..24).prop_map(|q| Value::Real(f64::from(q) / 4.0));
    let text = prop::sample::select(vec!["", "a", "B", "ab", "b", "Zed", "zed", "é", "10", "9"])
        .prop_map(|s| Value::Text(s.to_string()));
    let value = match kind {
        Kind::Int => int.boxed(),
        Kind::Real => real.boxed(),
        Kind::Numeric => prop_oneof![int, real].boxed(),
        Kind::Text => text.boxed(),
        Kind::Mixed => prop_oneof![int, text].boxed(),
    };
    prop_oneof![1 => Just(Value::Null), 3 => value].boxed()
}

fn kind() -> impl Strategy<Value = Kind> {
    prop::sample::select(vec![Kind::Int, Kind::Real, Kind::Numeric, Kind::Text, Kind::Mixed])
}

/// Row counts cluster around the threshold.
fn row_count() -> impl Strategy<Value = usize> {
    prop_oneof![
        0usize..=SUMMARY_THRESHOLD + 2,
        SUMMARY_THRESHOLD - 2..=SUMMARY_THRESHOLD + 2,
        SUMMARY_THRESHOLD..=120,
    ]
}

pub fn result_set() -> impl Strategy<Value = ResultSet> {
    (prop::collection::vec(kind(), 1..5), row_count()).prop_flat_map(|(kinds, n)| {
        let row: Vec<BoxedStrategy<Value>> = kinds.iter().map(|k| cell(*k)).collect();
        prop::collection::vec(row, n).prop_map(move |rows| {
            let names: Vec<String> = (0..kinds.len()).map(|i| format!("col{i}")).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            ResultSet::from_rows(&refs, rows)
        })
    })
}

fn same(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Text(x), Value::Text(y)) => x == y,
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => x == y,
            _ => a.is_null() && b.is_null(),
        },
    }
}

pub struct Expected {
    pub null_ratio: f64,
    pub distinct: usize,
    pub min: Option<Value>,
    pub max: Option<Value>,
}

pub fn expected(rs: &ResultSet, col: usize) -> Expected {
    let values: Vec<&Value> = rs.rows.iter().map(|r| &r[col]).collect();
    let non_null: Vec<&Value> = values.iter().copied().filter(|v| !v.is_null()).collect();
    let mut distinct = 0;
    for (i, v) in non_null.iter().enumerate() {
        if !non_null[..i].iter().any(|u| same(u, v)) {
            distinct += 1;
        }
    }
    let all_numeric = non_null.iter().all(|v| v.as_f64().is_some());
    let all_text = non_null.iter().all(|v| matches!(v, Value::Text(_)));
    let (mut min, mut max): (Option<Value>, Option<Value>) = (None, None);
    if !non_null.is_empty() && all_numeric {
        for v in &non_null {
            let x = v.as_f64().unwrap();
            if min.as_ref().is_none_or(|m| x < m.as_f64().unwrap()) {
                min = Some((*v).clone());
            }
            if max.as_ref().is_none_or(|m| x > m.as_f64().unwrap()) {
                max = Some((*v).clone());
            }
        }
    } else if !non_null.is_empty() && all_text {
        let text = |v: &Value| match v {
            Value::Text(t) => t.as_bytes().to_vec(),
            _ => Vec::new(),
        };
        for v in &non_null {
            if min.as_ref().is_none_or(|m| text(v) < text(m)) {
                min = Some((*v).clone());
            }
            if max.as_ref().is_none_or(|m| text(v) > text(m)) {
                max = Some((*v).clone());
            }
        }
    }
    let nulls = values.len() - non_null.len();
    Expected {
        null_ratio: nulls as f64 / values.len() as f64,
        distinct,
        min,
        max,
    }
}

fn same_opt(a: &Option<Value>, b: &Option<Value>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => same(x, y),
        _ => false,
    }
}

/// Mismatch description, if any.
pub fn check_stats(rs: &ResultSet, col: usize, got: &ColumnStats) -> Option<String> {
    let want = expected(rs, col);
    if got.null_ratio != want.null_ratio {
        return Some(format!("null_ratio {} != {}", got.null_ratio, want.null_ratio));
    }
    if got.distinct_count != want.distinct {
        return Some(format!("distinct {} != {}", got.distinct_count, want.distinct));
    }
    if !same_opt(&got.min_value, &want.min) || !same_opt(&got.max_value, &want.max) {
        return Some(format!(
            "min/max {:?}/{:?} != {:?}/{:?}",
            got.min_value, got.max_value, want.min, want.max
        ));
    }
    None
}
