use std::collections::HashSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{render_rows, ResultColumn, ResultSet, Value};

/// Results with more rows than this are summarized.
pub const SUMMARY_THRESHOLD: usize = 30;
/// Rows kept verbatim in a summary.
pub const HEAD_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub inferred_type: String,
    pub distinct_count: usize,
    pub null_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_value: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_value: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSummary {
    pub columns: Vec<ResultColumn>,
    pub head_rows: Vec<Vec<Value>>,
    pub row_count: usize,
    pub truncated: bool,
    pub stats: Vec<ColumnStats>,
}

/// What an execution looks like once it has passed through `summarize`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observation {
    Rows(ResultSet),
    Summary(ResultSummary),
}

impl Observation {
    pub fn row_count(&self) -> usize {
        match self {
            Observation::Rows(r) => r.rows.len(),
            Observation::Summary(s) => s.row_count,
        }
    }

    /// Prompt text for the observation.
    pub fn render(&self) -> String {
        match self {
            Observation::Rows(r) => {
                let mut out = format!("{} row(s)", r.rows.len());
                if r.truncated {
                    out.push_str(" (fetch limit reached)");
                }
                out.push('\n');
                out.push_str(&r.render());
                out
            }
            Observation::Summary(s) => s.render(),
        }
    }
}

impl ResultSummary {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{} row(s){}; first {} shown\n",
            self.row_count,
            if self.truncated { " (fetch limit reached)" } else { "" },
            self.head_rows.len()
        );
        out.push_str(&render_rows(&self.columns, &self.head_rows));
        out.push_str("column statistics:\n");
        for s in &self.stats {
            let _ = write!(
                out,
                "- {}: type={}, distinct={}, null_ratio={:.3}",
                s.name, s.inferred_type, s.distinct_count, s.null_ratio
            );
            if let (Some(min), Some(max)) = (&s.min_value, &s.max_value) {
                let _ = write!(out, ", min={min}, max={max}");
            }
            out.push('\n');
        }
        out
    }
}

/// Type label from the non-null values of a column.
pub(crate) fn infer_type<'a>(values: impl Iterator<Item = &'a Value>) -> &'static str {
    let mut seen: Option<&'static str> = None;
    for v in values {
        let t = match v {
            Value::Null => continue,
            Value::Integer(_) => "INTEGER",
            Value::Real(_) => "REAL",
            Value::Text(_) => "TEXT",
            Value::Blob(_) => "BLOB",
        };
        seen = Some(match (seen, t) {
            (None, t) => t,
            (Some(a), b) if a == b => a,
            (Some("INTEGER"), "REAL") | (Some("REAL"), "INTEGER") => "REAL",
            _ => "MIXED",
        });
    }
    seen.unwrap_or("NULL")
}

fn distinct_key(v: &Value) -> String {
    match v {
        Value::Null => "null".into(),
        Value::Integer(i) => format!("n:{i}"),
        Value::Real(r) if r.fract() == 0.0 && r.abs() < 1e15 => format!("n:{}", *r as i64),
        Value::Real(r) => format!("n:{r}"),
        Value::Text(t) => format!("s:{t}"),
        Value::Blob(_) => format!("b:{v}"),
    }
}

fn column_stats(column: &ResultColumn, values: &[&Value]) -> ColumnStats {
    let n = values.len();
    let nulls = values.iter().filter(|v| v.is_null()).count();
    let distinct: HashSet<String> = values
        .iter()
        .filter(|v| !v.is_null())
        .map(|v| distinct_key(v))
        .collect();
    let inferred = infer_type(values.iter().copied());
    let non_null: Vec<&Value> = values.iter().copied().filter(|v| !v.is_null()).collect();
    let (min_value, max_value) = match inferred {
        "INTEGER" | "REAL" => {
            let mut min: Option<&Value> = None;
            let mut max: Option<&Value> = None;
            for v in &non_null {
                let x = v.as_f64().unwrap_or(f64::NAN);
                if min.is_none_or(|m| x < m.as_f64().unwrap_or(f64::NAN)) {
                    min = Some(v);
                }
                if max.is_none_or(|m| x > m.as_f64().unwrap_or(f64::NAN)) {
                    max = Some(v);
                }
            }
            (min.cloned(), max.cloned())
        }
        "TEXT" => {
            let text = |v: &&&Value| match v {
                Value::Text(t) => t.clone(),
                _ => String::new(),
            };
            let min = non_null.iter().min_by_key(text).map(|v| (*v).clone());
            let max = non_null.iter().max_by_key(text).map(|v| (*v).clone());
            (min, max)
        }
        _ => (None, None),
    };
    ColumnStats {
        name: column.name.clone(),
        inferred_type: inferred.to_string(),
        distinct_count: distinct.len(),
        null_ratio: if n == 0 { 0.0 } else { nulls as f64 / n as f64 },
        min_value,
        max_value,
    }
}

/// Passes results of at most `SUMMARY_THRESHOLD` rows through unchanged and
/// compresses larger ones into a head plus per-column statistics.
pub fn summarize(result: ResultSet) -> Observation {
    if result.rows.len() <= SUMMARY_THRESHOLD {
        return Observation::Rows(result);
    }
    let stats = result
        .columns
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let values: Vec<&Value> = result.rows.iter().map(|r| &r[i]).collect();
            column_stats(c, &values)
        })
        .collect();
    ResultSummary {
        head_rows: result.rows.iter().take(HEAD_ROWS).cloned().collect(),
        row_count: result.rows.len(),
        truncated: result.truncated,
        columns: result.columns,
        stats,
    }
    .into()
}

impl From<ResultSummary> for Observation {
    fn from(s: ResultSummary) -> Self {
        Observation::Summary(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn int_rows(n: usize) -> ResultSet {
        ResultSet::from_rows(&["x"], (0..n as i64).map(|i| vec![Value::Integer(i)]).collect())
    }

    #[test]
    fn thirty_rows_pass_through() {
        let rs = int_rows(30);
        assert_eq!(summarize(rs.clone()), Observation::Rows(rs));
    }

    #[test]
    fn hundred_rows_summarized() {
        let rows = (0..100)
            .map(|i| {
                let v = if i % 5 < 2 { Value::Null } else { Value::Integer(i % 17) };
                vec![Value::Integer(i), v]
            })
            .collect();
        let rs = ResultSet::from_rows(&["id", "v"], rows);
        let Observation::Summary(s) = summarize(rs.clone()) else {
            panic!("expected a summary");
        };
        assert_eq!(s.head_rows.len(), HEAD_ROWS);
        assert_eq!(s.row_count, 100);
        let nulls = rs.rows.iter().filter(|r| r[1].is_null()).count();
        assert_eq!(nulls, 40);
        assert!((s.stats[1].null_ratio - 0.4).abs() < 1e-12);
        let mut distinct: Vec<i64> = rs
            .rows
            .iter()
            .filter_map(|r| match r[1] {
                Value::Integer(i) => Some(i),
                _ => None,
            })
            .collect();
        distinct.sort();
        distinct.dedup();
        assert_eq!(s.stats[1].distinct_count, distinct.len());
        assert_eq!(s.stats[0].min_value, Some(Value::Integer(0)));
        assert_eq!(s.stats[0].max_value, Some(Value::Integer(99)));
        assert!(s.render().contains("null_ratio=0.400"));
    }

    #[test]
    fn mixed_columns_have_no_range() {
        let rows = (0..40)
            .map(|i| vec![if i % 2 == 0 { Value::Integer(i) } else { Value::Text("a".into()) }])
            .collect();
        let Observation::Summary(s) = summarize(ResultSet::from_rows(&["m"], rows)) else {
            panic!()
        };
        assert_eq!(s.stats[0].inferred_type, "MIXED");
        assert!(s.stats[0].min_value.is_none());
    }
}
