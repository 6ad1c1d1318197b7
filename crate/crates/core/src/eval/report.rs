//! The evaluation report document and its terminal rendering.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::metrics::{
    aggregate_generation, aggregate_linking, GenerationAggregate, GenerationExample,
    LinkingAggregate, LinkingExample,
};
use crate::exec::CompareMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleReport {
    pub question_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linking: Option<LinkingExample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenerationExample>,
    #[serde(default)]
    pub tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    #[serde(default, skip_serializing_if = "Option::is_none", flatten)]
    pub linking: Option<LinkingAggregate>,
    #[serde(default, skip_serializing_if = "Option::is_none", flatten)]
    pub generation: Option<GenerationAggregate>,
    pub tokens_per_query: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub mode: CompareMode,
    /// Per-example linking scores are averaged per example, not pooled.
    pub averaging: String,
    pub per_example: Vec<ExampleReport>,
    pub aggregate: AggregateReport,
}

impl EvalReport {
    pub fn build(dataset: &str, mode: CompareMode, per_example: Vec<ExampleReport>) -> Self {
        let linking: Vec<LinkingExample> = per_example.iter().filter_map(|e| e.linking).collect();
        let generation: Vec<GenerationExample> =
            per_example.iter().filter_map(|e| e.generation.clone()).collect();
        let tokens_per_query = if per_example.is_empty() {
            0.0
        } else {
            per_example.iter().map(|e| e.tokens as f64).sum::<f64>() / per_example.len() as f64
        };
        Self {
            dataset: dataset.to_string(),
            mode,
            averaging: "macro".to_string(),
            aggregate: AggregateReport {
                linking: (!linking.is_empty()).then(|| aggregate_linking(&linking)),
                generation: (!generation.is_empty()).then(|| aggregate_generation(&generation)),
                tokens_per_query,
            },
            per_example,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }

    /// Aligned plain-text summary.
    pub fn render_table(&self) -> String {
        let mut rows: Vec<(&str, String)> = Vec::new();
        let pct = |x: f64| format!("{:.2}%", x * 100.0);
        if let Some(l) = &self.aggregate.linking {
            rows.push(("SRR", pct(l.srr)));
            rows.push(("NSR", pct(l.nsr)));
            rows.push(("NSP", pct(l.nsp)));
            rows.push(("NSF", pct(l.nsf)));
            rows.push(("avg columns", format!("{:.2}", l.mean_columns)));
        }
        if let Some(g) = &self.aggregate.generation {
            rows.push(("EX", pct(g.ex)));
            rows.push(("Pass@k", pct(g.pass_at_k)));
            rows.push(("EX@k", pct(g.ex_at_k)));
            rows.push(("avg rounds", format!("{:.2}", g.mean_rounds)));
            rows.push(("avg queries", format!("{:.2}", g.mean_queries)));
        }
        rows.push(("tokens/query", format!("{:.0}", self.aggregate.tokens_per_query)));
        let errors = self.per_example.iter().filter(|e| e.error.is_some()).count();
        let mut out = format!(
            "dataset: {}  mode: {:?}  examples: {}  errors: {}\n",
            self.dataset,
            self.mode,
            self.per_example.len(),
            errors
        );
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v:>10}");
        }
        out
    }
}
