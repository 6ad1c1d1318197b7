//! The SQL-writing agent: a loop over four actions (explore the data,
//! refine the plan, run a candidate query, confirm it) under an action and
//! token budget.

mod evidence;
mod state;

use serde::{Deserialize, Serialize};

use crate::exec::{Database, ExecOptions, ResultSet};
use crate::llm::{extract_action, ChatRequest, Gateway, GatewayError};
use crate::prompts::{Prompts, Template};

pub use evidence::{prefilter_evidence, DEFAULT_PREFILTER_THRESHOLD};
pub use state::{
    parse_snapshot, ActionPayload, AgentAction, AgentState, EntryKind, HistoryEntry, SqlAttempt, Snapshot,
};

pub const STEP_TAG: &str = "sql_agent_step";

pub const INVALID_ACTION_MESSAGE: &str =
    "Your response must start with exactly one action tag: [EXPLORE], [REFINE], [SQL] or [CONFIRM].";
pub const CONFIRM_WITHOUT_SQL_MESSAGE: &str =
    "[CONFIRM] is only accepted after an [SQL] action whose query executed successfully. Run the query with [SQL] first.";
pub const FORCED_ONLY_MESSAGE: &str =
    "The budget is nearly exhausted. Only [SQL] or [CONFIRM] is accepted now.";
pub const FORCED_DIRECTIVE: &str = "# MANDATORY\nThe action or token budget is nearly exhausted. Respond now with [SQL] and your best final query, or with [CONFIRM] if the last executed SQL already answers the question.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeBudget {
    pub max_actions: usize,
    pub max_tokens: u64,
    pub force_sql_actions: usize,
    pub force_sql_tokens: u64,
    /// Rendered-context size above which history is consolidated before the
    /// next call.
    pub consolidate_tokens: u64,
}

impl Default for EpisodeBudget {
    fn default() -> Self {
        Self {
            max_actions: 40,
            max_tokens: 56_000,
            force_sql_actions: 38,
            force_sql_tokens: 52_000,
            consolidate_tokens: 20_000,
        }
    }
}

/// Fixed inputs of one episode.
#[derive(Debug, Clone)]
pub struct EpisodeContext {
    pub question: String,
    pub evidence: String,
    /// Rendered column subset the agent works with.
    pub schema_text: String,
    pub guidance: String,
}

#[derive(Debug, Clone)]
pub struct EpisodeSettings {
    /// Request tag; concurrent samples use distinct suffixes such as
    /// `sql_agent_step@3` so each keeps its own ledger line.
    pub tag: String,
    pub temperature: f64,
    pub max_output_tokens: u64,
    pub explore: ExecOptions,
    pub final_exec: ExecOptions,
}

impl Default for EpisodeSettings {
    fn default() -> Self {
        Self {
            tag: STEP_TAG.to_string(),
            temperature: 0.0,
            max_output_tokens: 4096,
            explore: ExecOptions::read_only(),
            final_exec: ExecOptions::final_mode(),
        }
    }
}

/// One line of the episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub step: usize,
    pub kind: String,
    pub body: String,
    pub observation: String,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub final_sql: Option<String>,
    pub final_result: Option<ResultSet>,
    /// Maximal runs of consecutive exploration actions.
    pub rounds: usize,
    /// Exploration statements executed.
    pub query_count: usize,
    pub confirmed: bool,
    /// No query ever executed successfully.
    pub failed: bool,
    pub action_count: usize,
    pub token_count: u64,
    pub trace: Vec<ActionRecord>,
}

impl EpisodeResult {
    pub fn trace_jsonl(&self) -> String {
        self.trace
            .iter()
            .map(|r| serde_json::to_string(r).unwrap_or_default() + "\n")
            .collect()
    }
}

/// Renders the step prompt in its fixed section order.
pub fn render_prompt(
    prompts: &Prompts,
    ctx: &EpisodeContext,
    state: &AgentState,
    forced: bool,
) -> String {
    let snapshot = state
        .snapshot
        .as_ref()
        .map(Snapshot::render)
        .unwrap_or_else(|| "(none yet)".to_string());
    let history = state.render_history();
    let directive = if forced { FORCED_DIRECTIVE } else { "" };
    prompts
        .render(
            Template::AgentStep,
            &[
                ("action_space", prompts.text(Template::ActionSpace)),
                ("schema", &ctx.schema_text),
                ("question", &ctx.question),
                ("evidence", &ctx.evidence),
                ("guidance", &ctx.guidance),
                ("snapshot", &snapshot),
                ("history", &history),
                ("directive", directive),
            ],
        )
        .unwrap_or_default()
}

/// One model call and the dispatch of its action. Returns the tokens the
/// call consumed.
pub fn step(
    gateway: &Gateway,
    prompt: String,
    state: &mut AgentState,
    db: &Database,
    settings: &EpisodeSettings,
    forced: bool,
) -> Result<u64, GatewayError> {
    let req = ChatRequest::user_prompt(settings.tag.clone(), prompt, settings.temperature, settings.max_output_tokens);
    let step_no = state.action_count + 1;
    let (content, tokens) = match gateway.complete(&req) {
        Ok(resp) => (Some(resp.content), resp.input_tokens + resp.output_tokens),
        Err(GatewayError::OutputTruncated { .. }) => {
            let t = gateway
                .trace()
                .iter()
                .rev()
                .find(|r| r.tag == settings.tag)
                .map(|r| r.input_tokens + r.output_tokens)
                .unwrap_or(0);
            (None, t)
        }
        Err(e) => return Err(e),
    };
    state.token_count += tokens;
    let Some(content) = content else {
        state.push(HistoryEntry::new(
            step_no,
            EntryKind::Invalid,
            String::new(),
            format!("Your output hit the {} token limit. Be shorter. {INVALID_ACTION_MESSAGE}", settings.max_output_tokens),
        ), tokens);
        return Ok(tokens);
    };
    let action = match extract_action(&content) {
        Ok((tag, body)) => AgentAction::new(tag, body),
        Err(_) => {
            state.push(
                HistoryEntry::new(step_no, EntryKind::Invalid, content, INVALID_ACTION_MESSAGE.to_string()),
                tokens,
            );
            return Ok(tokens);
        }
    };
    state.dispatch(step_no, action, db, settings, forced, tokens);
    Ok(tokens)
}

/// Runs the agent until it confirms a query or the budget runs out.
pub fn run_episode(
    gateway: &Gateway,
    prompts: &Prompts,
    ctx: &EpisodeContext,
    db: &Database,
    budget: &EpisodeBudget,
    settings: &EpisodeSettings,
) -> Result<EpisodeResult, GatewayError> {
    let mut state = AgentState::default();
    let estimator = gateway.estimator();
    while !state.terminated
        && state.action_count < budget.max_actions
        && state.token_count < budget.max_tokens
    {
        let forced = state.action_count >= budget.force_sql_actions
            || state.token_count >= budget.force_sql_tokens;
        let mut prompt = render_prompt(prompts, ctx, &state, forced);
        if estimator.estimate(&prompt) > budget.consolidate_tokens {
            state.consolidate();
            prompt = render_prompt(prompts, ctx, &state, forced);
        }
        // the call about to be made must fit in the remaining token budget
        if state.token_count + estimator.estimate(&prompt) > budget.max_tokens {
            log::info!("episode token budget reached after {} actions", state.action_count);
            break;
        }
        step(gateway, prompt, &mut state, db, settings, forced)?;
    }
    Ok(state.finish())
}

#[cfg(test)]
mod tests;
