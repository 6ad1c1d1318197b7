use super::*;
use crate::exec::tests::scratch_db;
use crate::exec::Value;
use crate::llm::{ActionTag, ReplayEntry, ReplayScript};

const SETUP: &str = "CREATE TABLE t(id INTEGER, name TEXT);
INSERT INTO t VALUES (1,'a'),(2,'b'),(3,'c');";

fn ctx() -> EpisodeContext {
    EpisodeContext {
        question: "How many rows are in t?".into(),
        evidence: String::new(),
        schema_text: "t(id INTEGER, name TEXT)".into(),
        guidance: String::new(),
    }
}

fn script(replies: &[&str]) -> Gateway {
    Gateway::replay(ReplayScript::new(
        replies.iter().map(|r| ReplayEntry::new(STEP_TAG, *r)).collect(),
    ))
}

const REFINE: &str = "[REFINE]\n### Findings from Exploration:\n- three rows\n### Updated Understanding:\n- count them\n### Query Plan:\n- SELECT COUNT(*)\n### Next Action:\n- [Generate SQL]";

#[test]
fn snapshot_requires_understanding_and_plan() {
    let s = parse_snapshot(REFINE).unwrap();
    assert_eq!(s.findings, "- three rows");
    assert_eq!(s.plan, "- SELECT COUNT(*)");
    assert!(parse_snapshot("just thinking out loud").is_none());
    assert!(parse_snapshot("### Query Plan:\n- x").is_none());
}

#[test]
fn sql_payload_takes_last_statement() {
    let a = AgentAction::new(ActionTag::Sql, "```sql\nSELECT 1;\nSELECT 2\n```".into());
    assert_eq!(a.parsed_payload, ActionPayload::Sql { sql: Some("SELECT 2".into()) });
    let bare = AgentAction::new(ActionTag::Sql, "SELECT 3".into());
    assert_eq!(bare.parsed_payload, ActionPayload::Sql { sql: Some("SELECT 3".into()) });
}

#[test]
fn full_episode_confirms() {
    let (_d, db) = scratch_db(SETUP);
    let gw = script(&[
        "[EXPLORE]\n```sql\nSELECT * FROM t LIMIT 2;\nSELECT DISTINCT name FROM t;\n```",
        REFINE,
        "[SQL] ```sql\nSELECT COUNT(*) FROM t\n```",
        "[CONFIRM] counts rows",
    ]);
    let r = run_episode(&gw, &Prompts::default(), &ctx(), &db, &EpisodeBudget::default(), &EpisodeSettings::default()).unwrap();
    assert!(r.confirmed);
    assert_eq!(r.rounds, 1);
    assert_eq!(r.query_count, 2);
    assert_eq!(r.action_count, 4);
    assert_eq!(r.final_sql.as_deref(), Some("SELECT COUNT(*) FROM t"));
    assert_eq!(r.final_result.as_ref().unwrap().rows, vec![vec![Value::Integer(3)]]);
    assert_eq!(r.token_count, gw.ledger().get(STEP_TAG).total());
    assert_eq!(r.trace_jsonl().lines().count(), 4);
}

#[test]
fn confirm_before_sql_is_corrected() {
    let (_d, db) = scratch_db(SETUP);
    let gw = script(&["[CONFIRM] done", "no tag at all", "[SQL] ```sql\nSELECT nope FROM t\n```", "[CONFIRM] x"]);
    let budget = EpisodeBudget { max_actions: 4, ..EpisodeBudget::default() };
    let r = run_episode(&gw, &Prompts::default(), &ctx(), &db, &budget, &EpisodeSettings::default()).unwrap();
    assert!(!r.confirmed);
    assert!(r.failed);
    assert_eq!(r.trace[0].observation, CONFIRM_WITHOUT_SQL_MESSAGE);
    assert_eq!(r.trace[1].kind, "INVALID");
    assert!(r.trace[2].observation.contains("Execution failed"));
    // the erroring query is still reported for scoring
    assert_eq!(r.final_sql.as_deref(), Some("SELECT nope FROM t"));
}

#[test]
fn never_emitting_sql_is_forced_then_fails() {
    let (_d, db) = scratch_db(SETUP);
    let replies: Vec<&str> = std::iter::repeat("[REFINE] thinking").take(45).collect();
    let gw = script(&replies);
    let r = run_episode(&gw, &Prompts::default(), &ctx(), &db, &EpisodeBudget::default(), &EpisodeSettings::default()).unwrap();
    assert_eq!(r.action_count, 40);
    assert!(r.failed && r.final_sql.is_none());
    let prompts: Vec<String> = gw.trace().iter().map(|t| t.request.joined_content()).collect();
    assert!(!prompts[37].contains(FORCED_DIRECTIVE));
    assert!(prompts[38].contains(FORCED_DIRECTIVE));
    assert_eq!(r.trace[38].observation, FORCED_ONLY_MESSAGE);
}

fn entry(step: usize, kind: EntryKind, honored: bool, snapshot: bool) -> HistoryEntry {
    HistoryEntry {
        step,
        kind,
        body: format!("body {step}"),
        observation: format!("obs {step}"),
        snapshot,
        honored,
        statements: usize::from(kind == EntryKind::Explore),
    }
}

#[test]
fn consolidation_keeps_explorations_latest_snapshot_and_sql() {
    let mut s = AgentState::default();
    for e in [
        entry(1, EntryKind::Explore, true, false),
        entry(2, EntryKind::Refine, true, true),
        entry(3, EntryKind::Explore, true, false),
        entry(4, EntryKind::Refine, true, true),
        entry(5, EntryKind::Sql, true, false),
    ] {
        s.push(e, 0);
    }
    let before_len = crate::tokens::estimate(&s.render_history());
    s.consolidate();
    let steps: Vec<usize> = s.history.iter().map(|e| e.step).collect();
    assert_eq!(steps, vec![1, 3, 4, 5]);
    assert!(crate::tokens::estimate(&s.render_history()) <= before_len);
    let once = s.clone();
    s.consolidate();
    assert_eq!(s, once);
    assert_eq!(s.action_count, 5);
}

#[test]
fn explore_runs_count_as_rounds() {
    let mut s = AgentState::default();
    let kinds = [
        EntryKind::Explore,
        EntryKind::Explore,
        EntryKind::Refine,
        EntryKind::Explore,
        EntryKind::Sql,
        EntryKind::Explore,
    ];
    for (i, k) in kinds.into_iter().enumerate() {
        s.push(entry(i + 1, k, true, false), 0);
    }
    assert_eq!(s.rounds(), 3);
    assert_eq!(s.query_count, 4);
}

#[test]
fn explore_cannot_write() {
    let (_d, db) = scratch_db(SETUP);
    let gw = script(&["[EXPLORE]\n```sql\nDELETE FROM t;\n```", "[SQL] ```sql\nDROP TABLE t\n```"]);
    let budget = EpisodeBudget { max_actions: 2, ..EpisodeBudget::default() };
    let r = run_episode(&gw, &Prompts::default(), &ctx(), &db, &budget, &EpisodeSettings::default()).unwrap();
    assert!(r.trace[0].observation.contains("Error"));
    assert!(r.trace[1].observation.contains("Execution failed"));
    let rs = db.execute("SELECT COUNT(*) FROM t", &ExecOptions::read_only()).unwrap();
    assert_eq!(rs.rows, vec![vec![Value::Integer(3)]]);
}

#[test]
fn token_budget_stops_before_overrun() {
    let (_d, db) = scratch_db(SETUP);
    let replies: Vec<&str> = std::iter::repeat("[REFINE] thinking").take(40).collect();
    let gw = script(&replies);
    let budget = EpisodeBudget {
        max_tokens: 3000,
        force_sql_tokens: 2500,
        ..EpisodeBudget::default()
    };
    let r = run_episode(&gw, &Prompts::default(), &ctx(), &db, &budget, &EpisodeSettings::default()).unwrap();
    assert!(r.action_count < 40);
    let last_out = gw.trace().last().unwrap().output_tokens;
    assert!(r.token_count <= budget.max_tokens + last_out);
}
