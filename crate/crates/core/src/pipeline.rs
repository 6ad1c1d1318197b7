//! One task end to end: evidence filtering, schema linking, guided agent
//! episodes, and answer selection.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    prefilter_evidence, run_episode, EpisodeBudget, EpisodeContext, EpisodeResult,
    EpisodeSettings, DEFAULT_PREFILTER_THRESHOLD, STEP_TAG,
};
use crate::eval::{
    extract_gold_columns, score_example, score_linking, vote, CandidateBundle, ExampleReport,
    GenerationExample, LinkingExample, VoteOutcome, DEFAULT_SAMPLES,
};
use crate::exec::{CompareMode, Database, ExecError, ExecOptions, ResultSet, DEFAULT_FETCH_LIMIT};
use crate::guidance::{realize_plan, render_guidance, Guidance, RealizedPlan};
use crate::linking::{link_schema, LinkingConfig, LinkingOutcome, LogicalPlan};
use crate::llm::{Gateway, GatewayError, TokenLedger};
use crate::prompts::Prompts;
use crate::schema::{
    load_schema, render_subset, ColumnRef, DatabaseSchema, RenderStyle, SchemaError, SchemaSource,
    SchemaSubset,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid task {id}: {reason}")]
    InvalidTask { id: String, reason: String },
    #[error("the column subset for generation is empty")]
    EmptySubset,
}

/// A question to answer, normalized from whatever dataset it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub question_id: String,
    pub question: String,
    #[serde(default)]
    pub evidence: String,
    /// External-knowledge document, filtered before use.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge_path: Option<PathBuf>,
    pub db_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_sql: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_columns: Option<Vec<ColumnRef>>,
}

impl TaskRecord {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let invalid = |reason: String| PipelineError::InvalidTask {
            id: self.question_id.clone(),
            reason,
        };
        if self.question.trim().is_empty() {
            return Err(invalid("empty question".into()));
        }
        if !self.db_path.is_file() {
            return Err(invalid(format!("database not found: {}", self.db_path.display())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub samples: usize,
    pub temperature: f64,
    pub budget: EpisodeBudget,
    pub max_output_tokens: u64,
    pub prefilter_threshold: u64,
    /// Lets final SQL modify the database. Off by default.
    pub allow_writes_in_final: bool,
    pub query_timeout_secs: u64,
    pub fetch_limit: usize,
    pub episode_parallelism: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            samples: DEFAULT_SAMPLES,
            temperature: 0.7,
            budget: EpisodeBudget::default(),
            max_output_tokens: 4096,
            prefilter_threshold: DEFAULT_PREFILTER_THRESHOLD,
            allow_writes_in_final: false,
            query_timeout_secs: 30,
            fetch_limit: DEFAULT_FETCH_LIMIT,
            episode_parallelism: DEFAULT_SAMPLES,
        }
    }
}

impl GenerationConfig {
    pub fn episode_settings(&self, sample: usize) -> EpisodeSettings {
        let timeout = Duration::from_secs(self.query_timeout_secs);
        let mut final_exec = ExecOptions::final_mode().with_timeout(timeout);
        final_exec.fetch_limit = self.fetch_limit;
        final_exec.allow_writes_in_final = self.allow_writes_in_final;
        let mut explore = ExecOptions::read_only().with_timeout(timeout);
        explore.fetch_limit = self.fetch_limit;
        EpisodeSettings {
            tag: format!("{STEP_TAG}@{sample}"),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            explore,
            final_exec,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub linking: LinkingConfig,
    pub generation: GenerationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub realized: RealizedPlan,
    pub tips: Vec<String>,
    pub bundle: CandidateBundle,
    pub vote: VoteOutcome,
    pub final_sql: Option<String>,
    pub final_result: Option<ResultSet>,
    pub token_usage: TokenLedger,
}

impl GenerationOutcome {
    pub fn selected(&self) -> &EpisodeResult {
        &self.bundle.candidates[self.vote.index].episode
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub question_id: String,
    pub evidence: String,
    pub subset: SchemaSubset,
    pub linking: Option<LinkingOutcome>,
    pub generation: GenerationOutcome,
    pub token_usage: TokenLedger,
}

/// The task's evidence with its knowledge document, filtered, appended.
pub fn prepare_evidence(
    gateway: &Gateway,
    prompts: &Prompts,
    task: &TaskRecord,
    config: &GenerationConfig,
) -> Result<String, PipelineError> {
    let Some(path) = &task.knowledge_path else {
        return Ok(task.evidence.clone());
    };
    let doc = std::fs::read_to_string(path)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let filtered = prefilter_evidence(
        gateway,
        prompts,
        &task.question,
        &name,
        &doc,
        config.prefilter_threshold,
        config.max_output_tokens,
    )?;
    Ok(match (task.evidence.trim().is_empty(), filtered.trim().is_empty()) {
        (true, _) => filtered,
        (false, true) => task.evidence.clone(),
        (false, false) => format!("{}\n\n{}", task.evidence, filtered),
    })
}

/// Realized plan, tips, sampled episodes and the vote for one question over
/// a fixed column subset.
#[allow(clippy::too_many_arguments)]
pub fn generate(
    gateway: &Gateway,
    prompts: &Prompts,
    guidance: &Guidance,
    question: &str,
    evidence: &str,
    plan: &LogicalPlan,
    schema: &DatabaseSchema,
    subset: &SchemaSubset,
    db: &Database,
    config: &GenerationConfig,
) -> Result<GenerationOutcome, PipelineError> {
    if subset.is_empty() {
        return Err(PipelineError::EmptySubset);
    }
    let before = gateway.ledger();
    let schema_text = render_subset(schema, subset, RenderStyle::Full)?;
    let realized = realize_plan(
        gateway,
        prompts,
        question,
        evidence,
        &schema_text,
        plan,
        config.max_output_tokens,
    )?;
    let tips = guidance.retrieve_tips(question, evidence, Some(&realized), subset);
    let ctx = EpisodeContext {
        question: question.to_string(),
        evidence: evidence.to_string(),
        schema_text: schema_text.clone(),
        guidance: render_guidance(&tips),
    };

    let n = config.samples.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.episode_parallelism.clamp(1, n))
        .build()
        .map_err(|e| GatewayError::InvalidRequest(format!("episode pool: {e}")))?;
    let runs: Vec<(Gateway, Result<EpisodeResult, GatewayError>)> = pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|k| {
                let child = gateway.fork();
                let r = run_episode(
                    &child,
                    prompts,
                    &ctx,
                    db,
                    &config.budget,
                    &config.episode_settings(k),
                );
                (child, r)
            })
            .collect()
    });
    let mut episodes = Vec::with_capacity(n);
    let mut first_err = None;
    for (child, r) in runs {
        gateway.absorb(child)?;
        match r {
            Ok(e) => episodes.push(e),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e.into());
    }

    let bundle = CandidateBundle::new(episodes);
    let vote = vote(
        gateway,
        prompts,
        question,
        &schema_text,
        &bundle,
        config.max_output_tokens,
    );
    let chosen = &bundle.candidates[vote.index].episode;
    Ok(GenerationOutcome {
        realized,
        tips: tips.iter().map(|t| t.id.clone()).collect(),
        final_sql: chosen.final_sql.clone(),
        final_result: chosen.final_result.clone(),
        vote,
        bundle,
        token_usage: gateway.ledger().since(&before),
    })
}

/// Runs the whole pipeline on one task. With `oracle_schema`, linking is
/// skipped and the task's gold columns are used as the subset.
pub fn run_task(
    gateway: &Gateway,
    prompts: &Prompts,
    guidance: &Guidance,
    task: &TaskRecord,
    config: &PipelineConfig,
    oracle_schema: bool,
) -> Result<TaskOutcome, PipelineError> {
    task.validate()?;
    let before = gateway.ledger();
    let db = Database::open(&task.db_path)?;
    let schema = load_schema(&SchemaSource::Sqlite(task.db_path.clone()))?;
    let evidence = prepare_evidence(gateway, prompts, task, &config.generation)?;

    let (subset, plan, linking) = if oracle_schema {
        let gold = task.gold_columns.clone().ok_or_else(|| PipelineError::InvalidTask {
            id: task.question_id.clone(),
            reason: "oracle schema requested but the task has no gold columns".into(),
        })?;
        let subset: SchemaSubset = gold.into_iter().collect();
        subset.validate(&schema)?;
        (subset, LogicalPlan::fallback(&task.question), None)
    } else {
        let out = link_schema(
            gateway,
            prompts,
            &task.question,
            &evidence,
            &schema,
            &db,
            &config.linking,
        )?;
        (out.subset.clone(), out.plan.clone(), Some(out))
    };

    let generation = generate(
        gateway,
        prompts,
        guidance,
        &task.question,
        &evidence,
        &plan,
        &schema,
        &subset,
        &db,
        &config.generation,
    )?;
    Ok(TaskOutcome {
        question_id: task.question_id.clone(),
        evidence,
        subset,
        linking,
        generation,
        token_usage: gateway.ledger().since(&before),
    })
}

/// Gold columns of a task: the recorded ones, else those referenced by its
/// gold SQL.
pub fn task_gold_columns(task: &TaskRecord, schema: &DatabaseSchema) -> Result<BTreeSet<ColumnRef>, String> {
    if let Some(cols) = &task.gold_columns {
        return Ok(cols.iter().map(ColumnRef::normalized).collect());
    }
    let sql = task.gold_sql.as_deref().ok_or("task has no gold SQL")?;
    extract_gold_columns(sql, schema)
        .map(|g| g.refs)
        .map_err(|e| e.to_string())
}

/// Result of the task's gold SQL, or why it could not be produced.
pub fn gold_result(task: &TaskRecord) -> Result<ResultSet, String> {
    let sql = task.gold_sql.as_deref().ok_or("task has no gold SQL")?;
    Database::open(&task.db_path)
        .and_then(|db| db.execute(sql, &ExecOptions::read_only()))
        .map_err(|e| e.to_string())
}

/// Scores one finished task. Linking is scored only when linking ran.
pub fn score_task(task: &TaskRecord, outcome: &TaskOutcome, mode: CompareMode) -> ExampleReport {
    let linking = outcome.linking.as_ref().and_then(|_| {
        let schema = load_schema(&SchemaSource::Sqlite(task.db_path.clone())).ok()?;
        let gold = task_gold_columns(task, &schema).ok()?;
        Some(score_linking(&outcome.subset, &gold))
    });
    let gold = gold_result(task);
    let g = &outcome.generation;
    ExampleReport {
        question_id: task.question_id.clone(),
        linking,
        generation: Some(score_example(&g.bundle, &g.vote, gold.as_ref().map_err(Clone::clone), mode)),
        tokens: outcome.token_usage.total().total(),
        error: None,
    }
}

/// Report row for a task that did not finish; it counts as a miss.
pub fn failed_report(question_id: &str, error: &str, linked: bool) -> ExampleReport {
    ExampleReport {
        question_id: question_id.to_string(),
        linking: linked.then_some(LinkingExample {
            covered: false,
            recall: 0.0,
            precision: 0.0,
            f1: 0.0,
            retained_count: 0,
        }),
        generation: Some(GenerationExample {
            ex: false,
            pass_at_k: false,
            ex_at_k: 0.0,
            rounds: Vec::new(),
            queries: Vec::new(),
            selected: 0,
            gold_error: None,
        }),
        tokens: 0,
        error: Some(error.to_string()),
    }
}
