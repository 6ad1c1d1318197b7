//! Episode state: the surviving history, the latest plan snapshot, counters,
//! and the dispatch of parsed actions.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{
    ActionRecord, EpisodeResult, EpisodeSettings, CONFIRM_WITHOUT_SQL_MESSAGE, FORCED_ONLY_MESSAGE,
};
use crate::exec::{summarize, Database, ResultSet};
use crate::llm::{extract_sql_blocks, ActionTag};

/// The structured part of a REFINE action.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Snapshot {
    pub findings: String,
    pub understanding: String,
    pub plan: String,
}

impl Snapshot {
    pub fn render(&self) -> String {
        format!(
            "### Findings from Exploration:\n{}\n### Updated Understanding:\n{}\n### Query Plan:\n{}",
            self.findings, self.understanding, self.plan
        )
    }
}

static HEADING: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)^\s*#{1,6}\s*([^\n:]+?)\s*:?\s*$").expect("heading regex"));

/// Reads the findings / understanding / plan headings out of a REFINE body.
/// Returns `None` unless both the understanding and the plan are present.
pub fn parse_snapshot(body: &str) -> Option<Snapshot> {
    let heads: Vec<(usize, usize, String)> = HEADING
        .captures_iter(body)
        .map(|c| {
            let m = c.get(0).expect("whole match");
            (m.start(), m.end(), c[1].trim().to_ascii_lowercase())
        })
        .collect();
    let mut snap = Snapshot::default();
    let (mut has_understanding, mut has_plan) = (false, false);
    for (i, (_, end, name)) in heads.iter().enumerate() {
        let stop = heads.get(i + 1).map(|h| h.0).unwrap_or(body.len());
        let text = body[*end..stop].trim().to_string();
        if name.starts_with("findings") {
            snap.findings = text;
        } else if name.starts_with("updated understanding") || name == "understanding" {
            snap.understanding = text;
            has_understanding = true;
        } else if name.starts_with("query plan") || name == "plan" {
            snap.plan = text;
            has_plan = true;
        }
    }
    (has_understanding && has_plan).then_some(snap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActionPayload {
    Explore { statements: Vec<String> },
    Refine { snapshot: Option<Snapshot> },
    Sql { sql: Option<String> },
    Confirm { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAction {
    pub kind: ActionTag,
    pub body: String,
    pub parsed_payload: ActionPayload,
}

impl AgentAction {
    pub fn new(kind: ActionTag, body: String) -> Self {
        let parsed_payload = match kind {
            ActionTag::Explore => ActionPayload::Explore {
                statements: extract_sql_blocks(&body)
                    .or_else(|_| extract_sql_blocks(&format!("```sql\n{body}\n```")))
                    .unwrap_or_default(),
            },
            ActionTag::Refine => ActionPayload::Refine {
                snapshot: parse_snapshot(&body),
            },
            ActionTag::Sql => ActionPayload::Sql {
                sql: candidate_sql(&body),
            },
            ActionTag::Confirm => ActionPayload::Confirm { text: body.clone() },
        };
        Self {
            kind,
            body,
            parsed_payload,
        }
    }
}

/// The last statement of the fenced blocks, or of the bare body when it has
/// no fences.
fn candidate_sql(body: &str) -> Option<String> {
    extract_sql_blocks(body)
        .ok()
        .and_then(|mut v| v.pop())
        .or_else(|| {
            crate::exec::split::split_statements(body)
                .pop()
                .filter(|s| crate::exec::split::leading_keyword(s).is_some())
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EntryKind {
    Explore,
    Refine,
    Sql,
    Confirm,
    Invalid,
}

impl EntryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryKind::Explore => "EXPLORE",
            EntryKind::Refine => "REFINE",
            EntryKind::Sql => "SQL",
            EntryKind::Confirm => "CONFIRM",
            EntryKind::Invalid => "INVALID",
        }
    }
}

impl From<ActionTag> for EntryKind {
    fn from(t: ActionTag) -> Self {
        match t {
            ActionTag::Explore => EntryKind::Explore,
            ActionTag::Refine => EntryKind::Refine,
            ActionTag::Sql => EntryKind::Sql,
            ActionTag::Confirm => EntryKind::Confirm,
        }
    }
}

/// One (action, observation) pair of the prompt history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub kind: EntryKind,
    pub body: String,
    pub observation: String,
    /// REFINE entries only: the body carried a structured snapshot.
    pub snapshot: bool,
    /// The action was dispatched rather than answered with a correction.
    pub honored: bool,
    /// Exploration statements executed by this entry.
    pub statements: usize,
}

impl HistoryEntry {
    pub fn new(step: usize, kind: EntryKind, body: String, observation: String) -> Self {
        Self {
            step,
            kind,
            body,
            observation,
            snapshot: false,
            honored: false,
            statements: 0,
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!("## Action {}: [{}]\n", self.step, self.kind.as_str());
        if !self.body.is_empty() {
            out.push_str(&self.body);
            out.push('\n');
        }
        if !self.observation.is_empty() {
            out.push_str("### Observation\n");
            out.push_str(&self.observation);
            out.push('\n');
        }
        out
    }
}

/// A candidate query and how its execution went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlAttempt {
    pub sql: String,
    pub result: Result<ResultSet, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub history: Vec<HistoryEntry>,
    pub snapshot: Option<Snapshot>,
    /// Every action taken, kept whole for the trace even when the prompt
    /// history is consolidated.
    pub actions: Vec<ActionRecord>,
    pub action_count: usize,
    pub token_count: u64,
    pub query_count: usize,
    /// Per action: whether it was an executed exploration.
    explore_marks: Vec<bool>,
    pub last_sql: Option<SqlAttempt>,
    pub last_success: Option<SqlAttempt>,
    pub terminated: bool,
    pub confirmed: bool,
    pub final_sql: Option<String>,
}

impl AgentState {
    pub fn render_history(&self) -> String {
        if self.history.is_empty() {
            return "(no actions yet)".to_string();
        }
        self.history
            .iter()
            .map(HistoryEntry::render)
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Appends an entry, counting it as one action.
    pub fn push(&mut self, entry: HistoryEntry, tokens: u64) {
        self.action_count += 1;
        self.query_count += entry.statements;
        self.explore_marks
            .push(entry.kind == EntryKind::Explore && entry.honored && entry.statements > 0);
        self.actions.push(ActionRecord {
            step: entry.step,
            kind: entry.kind.as_str().to_string(),
            body: entry.body.clone(),
            observation: entry.observation.clone(),
            tokens,
        });
        self.history.push(entry);
    }

    /// Maximal runs of consecutive executed explorations.
    pub fn rounds(&self) -> usize {
        let mut runs = 0;
        let mut prev = false;
        for &m in &self.explore_marks {
            if m && !prev {
                runs += 1;
            }
            prev = m;
        }
        runs
    }

    /// Prunes the history to explorations, the latest snapshot-carrying
    /// REFINE and the latest SQL attempt.
    pub fn consolidate(&mut self) {
        let last_snapshot = self
            .history
            .iter()
            .rposition(|e| e.kind == EntryKind::Refine && e.snapshot);
        let last_sql = self
            .history
            .iter()
            .rposition(|e| e.kind == EntryKind::Sql && e.honored);
        let kept: Vec<HistoryEntry> = self
            .history
            .drain(..)
            .enumerate()
            .filter(|(i, e)| {
                e.kind == EntryKind::Explore && e.honored
                    || Some(*i) == last_snapshot
                    || Some(*i) == last_sql
            })
            .map(|(_, e)| e)
            .collect();
        self.history = kept;
    }

    pub(super) fn dispatch(
        &mut self,
        step: usize,
        action: AgentAction,
        db: &Database,
        settings: &EpisodeSettings,
        forced: bool,
        tokens: u64,
    ) {
        let kind = EntryKind::from(action.kind);
        if forced && matches!(kind, EntryKind::Explore | EntryKind::Refine) {
            self.push(
                HistoryEntry::new(step, kind, action.body, FORCED_ONLY_MESSAGE.to_string()),
                tokens,
            );
            return;
        }
        let mut entry = HistoryEntry::new(step, kind, action.body, String::new());
        match action.parsed_payload {
            ActionPayload::Explore { statements } => {
                if statements.is_empty() {
                    entry.observation =
                        "No SQL statement found. Put exploration queries in a ```sql block.".to_string();
                } else {
                    let obs: Vec<String> = statements
                        .iter()
                        .enumerate()
                        .map(|(i, s)| {
                            let outcome = db.explore(s, &settings.explore);
                            format!("Query {}:\n```sql\n{s}\n```\nResult:\n{}", i + 1, outcome.render())
                        })
                        .collect();
                    entry.observation = obs.join("\n\n");
                    entry.honored = true;
                    entry.statements = statements.len();
                }
                self.push(entry, tokens);
            }
            ActionPayload::Refine { snapshot } => {
                entry.honored = true;
                let structured = snapshot.is_some();
                if let Some(s) = snapshot {
                    entry.snapshot = true;
                    self.snapshot = Some(s);
                }
                self.push(entry, tokens);
                if structured {
                    self.consolidate();
                }
            }
            ActionPayload::Sql { sql } => {
                match sql {
                    None => {
                        entry.observation =
                            "No SQL query found. Use [SQL] ```sql <query> ```.".to_string();
                    }
                    Some(sql) => {
                        entry.honored = true;
                        let attempt = match db.execute(&sql, &settings.final_exec) {
                            Ok(rs) => {
                                entry.observation =
                                    format!("Execution succeeded.\n{}", summarize(rs.clone()).render());
                                SqlAttempt { sql, result: Ok(rs) }
                            }
                            Err(e) => {
                                let msg = format!("Error ({}): {}", e.kind, e.message);
                                entry.observation =
                                    format!("Execution failed.\n{msg}\nFix the query and try again.");
                                SqlAttempt { sql, result: Err(msg) }
                            }
                        };
                        if attempt.result.is_ok() {
                            self.last_success = Some(attempt.clone());
                        }
                        self.last_sql = Some(attempt);
                    }
                }
                self.push(entry, tokens);
            }
            ActionPayload::Confirm { .. } => {
                let ok = self.last_sql.as_ref().is_some_and(|a| a.result.is_ok());
                if ok {
                    entry.honored = true;
                    entry.observation = "Confirmed.".to_string();
                    self.terminated = true;
                    self.confirmed = true;
                    self.final_sql = self.last_sql.as_ref().map(|a| a.sql.clone());
                } else {
                    entry.observation = CONFIRM_WITHOUT_SQL_MESSAGE.to_string();
                }
                self.push(entry, tokens);
            }
        }
    }

    /// Closes the episode: a confirmed query, else the last query that ran,
    /// else the last one attempted.
    pub fn finish(mut self) -> EpisodeResult {
        self.terminated = true;
        let (final_sql, final_result) = if self.confirmed {
            let a = self.last_sql.clone().expect("confirmed implies an attempt");
            (Some(a.sql), a.result.ok())
        } else if let Some(a) = self.last_success.clone() {
            (Some(a.sql), a.result.ok())
        } else {
            (self.last_sql.as_ref().map(|a| a.sql.clone()), None)
        };
        self.final_sql = final_sql.clone();
        EpisodeResult {
            final_sql,
            final_result,
            rounds: self.rounds(),
            query_count: self.query_count,
            confirmed: self.confirmed,
            failed: self.last_success.is_none(),
            action_count: self.action_count,
            token_count: self.token_count,
            trace: self.actions,
        }
    }
}
