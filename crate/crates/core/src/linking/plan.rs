//! Schema-agnostic logical plans: sampled candidates and their consensus.

use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::llm::{
    extract_json, parsed_or_fallback, ChatRequest, ExtractError, Gateway, GatewayError,
    DEFAULT_PARSE_RETRIES,
};
use crate::prompts::{Prompts, Template};

pub const DEFAULT_PLAN_SAMPLES: usize = 2;
pub const DEFAULT_PLAN_TEMPERATURE: f64 = 0.8;
pub const DEFAULT_AGGREGATE_TEMPERATURE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    Candidate(usize),
    Master,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicalPlan {
    pub steps: Vec<String>,
    pub source: PlanSource,
}

impl LogicalPlan {
    /// Single-step plan used when no candidate could be parsed.
    pub fn fallback(question: &str) -> Self {
        Self {
            steps: vec![format!("Answer: {question}")],
            source: PlanSource::Candidate(0),
        }
    }

    /// Steps as a numbered list, one per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.steps.iter().enumerate() {
            let _ = writeln!(out, "{}. {}", i + 1, s);
        }
        out.truncate(out.trim_end().len());
        out
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

static NUMBERED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(?:[-*]\s*)?(?:\*\*)?(?:step\s*)?\d+\s*[.):]\s*(?:\*\*)?\s*(.*\S)\s*$")
        .expect("numbered regex")
});

fn strip_number(step: &str) -> String {
    NUMBERED
        .captures(step)
        .map(|c| c[1].to_string())
        .unwrap_or_else(|| step.trim().to_string())
}

#[derive(Deserialize)]
struct PlanJson {
    logical_steps: Vec<String>,
}

/// Steps from a `{"logical_steps": [...]}` answer.
pub fn parse_plan_json(content: &str) -> Result<Vec<String>, ExtractError> {
    let plan: PlanJson = extract_json(content)?;
    let steps: Vec<String> = plan
        .logical_steps
        .iter()
        .map(|s| strip_number(s))
        .filter(|s| !s.is_empty())
        .collect();
    if steps.is_empty() {
        return Err(ExtractError::ParseFailure("logical_steps is empty".into()));
    }
    Ok(steps)
}

/// Steps from a numbered list anywhere in the answer.
pub fn parse_numbered_list(content: &str) -> Result<Vec<String>, ExtractError> {
    let steps: Vec<String> = content
        .lines()
        .filter_map(|l| NUMBERED.captures(l).map(|c| c[1].to_string()))
        .collect();
    if steps.is_empty() {
        return Err(ExtractError::ParseFailure("no numbered steps".into()));
    }
    Ok(steps)
}

/// Samples `n` candidate plans from the question alone. Candidates that stay
/// unparseable after retries are dropped; if none survive, the single
/// fallback plan is returned.
pub fn generate_plans(
    gateway: &Gateway,
    prompts: &Prompts,
    question: &str,
    n: usize,
    temperature: f64,
    max_output_tokens: u64,
) -> Result<Vec<LogicalPlan>, GatewayError> {
    let prompt = prompts
        .render(Template::Plan, &[("question", question)])
        .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
    let mut plans = Vec::new();
    for i in 0..n.max(1) {
        let req = ChatRequest::user_prompt(Template::Plan.name(), prompt.clone(), temperature, max_output_tokens);
        if let Some(steps) =
            parsed_or_fallback(gateway.complete_parsed(&req, DEFAULT_PARSE_RETRIES, parse_plan_json))?
        {
            plans.push(LogicalPlan {
                steps,
                source: PlanSource::Candidate(i),
            });
        }
    }
    if plans.is_empty() {
        plans.push(LogicalPlan::fallback(question));
    }
    Ok(plans)
}

/// Merges candidates into the master plan. Always makes the call, even for
/// a single candidate; an unparseable answer promotes the first candidate.
pub fn aggregate_plans(
    gateway: &Gateway,
    prompts: &Prompts,
    question: &str,
    candidates: &[LogicalPlan],
    temperature: f64,
    max_output_tokens: u64,
) -> Result<LogicalPlan, GatewayError> {
    let first = candidates
        .first()
        .cloned()
        .unwrap_or_else(|| LogicalPlan::fallback(question));
    let mut listing = String::new();
    for (i, c) in candidates.iter().enumerate() {
        if i > 0 {
            listing.push_str("\n\n");
        }
        let _ = write!(listing, "Plan {}:\n{}", i + 1, c.render());
    }
    let count = candidates.len().to_string();
    let prompt = prompts
        .render(
            Template::Aggregate,
            &[("count", &count), ("question", question), ("plans", &listing)],
        )
        .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
    let req = ChatRequest::user_prompt(Template::Aggregate.name(), prompt, temperature, max_output_tokens);
    let steps = parsed_or_fallback(gateway.complete_parsed(&req, DEFAULT_PARSE_RETRIES, parse_numbered_list))?
        .unwrap_or(first.steps);
    Ok(LogicalPlan {
        steps,
        source: PlanSource::Master,
    })
}
