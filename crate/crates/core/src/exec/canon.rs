use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{ResultSet, Value};

pub const DEFAULT_FLOAT_PRECISION: usize = 6;
/// Key shared by every result with no rows.
pub const EMPTY_RESULT_KEY: &str = "<empty>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareMode {
    /// Same rows, same columns.
    #[default]
    Strict,
    /// Same row count; every gold column matched by a distinct predicted
    /// column. Extra predicted columns are tolerated.
    Relaxed,
}

fn format_number(x: f64, precision: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x.fract() == 0.0 && x.abs() < 1e15 {
        return format!("{}", x as i64);
    }
    let digits = precision.max(1) - 1;
    let rounded: f64 = format!("{x:.digits$e}").parse().unwrap_or(x);
    if rounded.fract() == 0.0 && rounded.abs() < 1e15 {
        format!("{}", rounded as i64)
    } else {
        format!("{rounded}")
    }
}

/// Normalized text for one cell. Numbers share a tag regardless of storage
/// class, so `3` and `3.0` agree.
pub fn canonical_cell(v: &Value, precision: usize) -> String {
    match v {
        Value::Null => "null".to_string(),
        Value::Integer(i) => format!("n:{i}"),
        Value::Real(r) => format!("n:{}", format_number(*r, precision)),
        Value::Text(t) => format!("s:{}", t.trim()),
        Value::Blob(_) => format!("b:{v}"),
    }
}

fn row_key(row: &[Value], precision: usize) -> String {
    let mut cells: Vec<String> = row.iter().map(|v| canonical_cell(v, precision)).collect();
    cells.sort();
    serde_json::to_string(&cells).unwrap_or_default()
}

/// Order-insensitive key for a result: rows and the cells inside each row
/// may appear in any order.
pub fn canonicalize(result: &ResultSet, precision: usize) -> String {
    if result.rows.is_empty() {
        return EMPTY_RESULT_KEY.to_string();
    }
    let mut rows: Vec<String> = result.rows.iter().map(|r| row_key(r, precision)).collect();
    rows.sort();
    rows.join("\n")
}

fn column_multiset(result: &ResultSet, i: usize, precision: usize) -> Vec<String> {
    let mut cells: Vec<String> = result
        .rows
        .iter()
        .map(|r| canonical_cell(&r[i], precision))
        .collect();
    cells.sort();
    cells
}

fn column_multisets(result: &ResultSet, precision: usize) -> Vec<Vec<String>> {
    (0..result.columns.len())
        .map(|i| column_multiset(result, i, precision))
        .collect()
}

pub fn compare(pred: &ResultSet, gold: &ResultSet, mode: CompareMode) -> bool {
    let p = DEFAULT_FLOAT_PRECISION;
    match mode {
        CompareMode::Strict => {
            if pred.columns.len() != gold.columns.len() || pred.rows.len() != gold.rows.len() {
                return false;
            }
            if canonicalize(pred, p) != canonicalize(gold, p) {
                return false;
            }
            let mut a = column_multisets(pred, p);
            let mut b = column_multisets(gold, p);
            a.sort();
            b.sort();
            a == b
        }
        CompareMode::Relaxed => {
            if pred.rows.len() != gold.rows.len() {
                return false;
            }
            let pred_cols = column_multisets(pred, p);
            let mut used = vec![false; pred_cols.len()];
            let mut by_value: HashMap<&[String], Vec<usize>> = HashMap::new();
            for (i, c) in pred_cols.iter().enumerate() {
                by_value.entry(c.as_slice()).or_default().push(i);
            }
            for g in column_multisets(gold, p) {
                let Some(candidates) = by_value.get(g.as_slice()) else {
                    return false;
                };
                match candidates.iter().find(|&&i| !used[i]) {
                    Some(&i) => used[i] = true,
                    None => return false,
                }
            }
            true
        }
    }
}
