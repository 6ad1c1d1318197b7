//! Turning the master plan into concrete realization paths and keywords.

use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::linking::LogicalPlan;
use crate::llm::{parsed_or_fallback, ChatRequest, ExtractError, Gateway, GatewayError};
use crate::prompts::{Prompts, Template};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealizedStep {
    pub description: String,
    pub info_need: String,
    pub possible_paths: Vec<String>,
    pub keywords: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_snippet: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealizedPlan {
    pub steps: Vec<RealizedStep>,
}

impl RealizedPlan {
    /// One step whose keywords are the question's whitespace tokens.
    pub fn fallback(question: &str) -> Self {
        Self {
            steps: vec![RealizedStep {
                description: question.trim().to_string(),
                keywords: question.split_whitespace().map(str::to_string).collect(),
                ..RealizedStep::default()
            }],
        }
    }

    /// Everything the plan says, as matched by plan rules.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.steps.iter().enumerate() {
            let _ = writeln!(out, "Step {}: {}", i + 1, s.description);
            if !s.info_need.is_empty() {
                let _ = writeln!(out, "Info need: {}", s.info_need);
            }
            if !s.possible_paths.is_empty() {
                let _ = writeln!(out, "Possible paths: {}", s.possible_paths.join("; "));
            }
            if !s.keywords.is_empty() {
                let _ = writeln!(out, "Keywords: {}", s.keywords.join(", "));
            }
            if let Some(e) = &s.evidence_snippet {
                let _ = writeln!(out, "Evidence: {e}");
            }
        }
        out
    }
}

static STEP: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(?:#+\s*)?(?:\*\*)?\s*step\s+(\d+)\s*[:.)]\s*(?:\*\*)?\s*(.*?)\s*(?:\*\*)?\s*$")
        .expect("step regex")
});
static FIELD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(?:[-*\u{2022}]\s*)?(?:\*\*)?(info\s+need|possible\s+paths|keywords|evidence)(?:\*\*)?\s*:\s*(?:\*\*)?\s*(.*?)\s*$")
        .expect("field regex")
});

fn strip_quotes(s: &str) -> String {
    let t = s.trim();
    for (a, b) in [('\'', '\''), ('"', '"'), ('`', '`')] {
        if t.len() >= 2 && t.starts_with(a) && t.ends_with(b) {
            return t[1..t.len() - 1].trim().to_string();
        }
    }
    t.to_string()
}

fn strip_brackets(s: &str) -> &str {
    let t = s.trim();
    t.strip_prefix('[')
        .and_then(|x| x.strip_suffix(']'))
        .unwrap_or(t)
}

/// Splits on commas that are outside quotes and parentheses.
fn split_list(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    let mut depth = 0usize;
    for c in s.chars() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None => match c {
                '\'' | '"' | '`' => quote = Some(c),
                '(' | '[' => depth += 1,
                ')' | ']' => depth = depth.saturating_sub(1),
                ',' if depth == 0 => {
                    out.push(std::mem::take(&mut cur));
                    continue;
                }
                _ => {}
            },
        }
        cur.push(c);
    }
    out.push(cur);
    out.into_iter()
        .map(|p| strip_quotes(&p))
        .filter(|p| !p.is_empty())
        .collect()
}

/// Parses the "Step N:" block structure.
pub fn parse_realized(content: &str) -> Result<RealizedPlan, ExtractError> {
    let mut steps: Vec<RealizedStep> = Vec::new();
    for line in content.lines() {
        if let Some(c) = STEP.captures(line) {
            steps.push(RealizedStep {
                description: c[2].to_string(),
                ..RealizedStep::default()
            });
            continue;
        }
        let (Some(step), Some(c)) = (steps.last_mut(), FIELD.captures(line)) else {
            continue;
        };
        let value = c[2].to_string();
        let key = c[1].to_ascii_lowercase();
        if key.starts_with("info") {
            step.info_need = value;
        } else if key.starts_with("possible") {
            step.possible_paths = split_list(strip_brackets(&value));
        } else if key == "keywords" {
            step.keywords = split_list(strip_brackets(&value));
        } else if !value.is_empty() {
            step.evidence_snippet = Some(value);
        }
    }
    if steps.is_empty() {
        return Err(ExtractError::ParseFailure("no Step N: blocks".into()));
    }
    Ok(RealizedPlan { steps })
}

/// One realization call over the master plan; falls back to the question's
/// tokens when the answer has no step structure.
pub fn realize_plan(
    gateway: &Gateway,
    prompts: &Prompts,
    question: &str,
    evidence: &str,
    schema_text: &str,
    plan: &LogicalPlan,
    max_output_tokens: u64,
) -> Result<RealizedPlan, GatewayError> {
    let plan_text = plan.render();
    let prompt = prompts
        .render(
            Template::RealizationPaths,
            &[
                ("question", question),
                ("evidence", evidence),
                ("schema", schema_text),
                ("plan", &plan_text),
            ],
        )
        .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
    let req = ChatRequest::user_prompt(Template::RealizationPaths.name(), prompt, 0.0, max_output_tokens);
    Ok(
        parsed_or_fallback(gateway.complete_parsed(&req, 0, parse_realized))?
            .unwrap_or_else(|| RealizedPlan::fallback(question)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linking::PlanSource;
    use crate::llm::{ReplayEntry, ReplayScript};

    const TWO: &str = "Step 1: Filter for high schools
  - Info need: Identify high school records
  - Possible paths: 'school_type column', 'EILCode column', 'join with school_types table'
  - Keywords: schools, school_type, EILCode, filter, high school
  - Evidence: EILCode = 'HS' means high school

Step 2: Calculate average score
  - Info need: Average of scores
  - Possible paths: 'AVG(score_column)', 'SUM/COUNT formula', 'pre-computed avg_score column'
  - Keywords: scores, average, AVG";

    #[test]
    fn parses_two_steps() {
        let p = parse_realized(TWO).unwrap();
        assert_eq!(p.steps.len(), 2);
        assert_eq!(p.steps[1].keywords, vec!["scores", "average", "AVG"]);
        assert_eq!(p.steps[1].possible_paths[0], "AVG(score_column)");
        assert_eq!(p.steps[0].possible_paths.len(), 3);
        assert_eq!(p.steps[0].evidence_snippet.as_deref(), Some("EILCode = 'HS' means high school"));
        assert_eq!(p.steps[1].evidence_snippet, None);
    }

    #[test]
    fn bracketed_keywords_and_markdown() {
        let p = parse_realized("**Step 1:** Count rows\n- **Keywords:** [count, rows]").unwrap();
        assert_eq!(p.steps[0].description, "Count rows");
        assert_eq!(p.steps[0].keywords, vec!["count", "rows"]);
    }

    #[test]
    fn fallback_on_unstructured() {
        let gw = Gateway::replay(ReplayScript::new(vec![ReplayEntry::new("sql_kw", "whatever")]));
        let plan = LogicalPlan {
            steps: vec!["a".into()],
            source: PlanSource::Master,
        };
        let r = realize_plan(&gw, &Prompts::default(), "How many  schools?", "", "", &plan, 100).unwrap();
        assert_eq!(r.steps.len(), 1);
        assert_eq!(r.steps[0].keywords, vec!["How", "many", "schools?"]);
        assert_eq!(gw.trace_len(), 1);
    }
}
