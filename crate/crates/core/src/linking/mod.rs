//! Schema linking: narrowing a database schema to the columns a question
//! needs.
//!
//! Stages, in order: plan sampling and consensus, two-pass pruning per
//! schema batch, table role analysis, concurrent per-table profiling, and a
//! final synthesis that may run join checks before committing.

mod plan;
mod profile;
mod prune;
mod semantic;
mod synthesis;

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::exec::{Database, ExecOptions, DEFAULT_FETCH_LIMIT};
use crate::llm::{Gateway, GatewayError, TokenLedger, DEFAULT_PARSE_RETRIES};
use crate::prompts::Prompts;
use crate::schema::{
    merge_identical_tables, partition_batches, DatabaseSchema, SchemaBatch, SchemaSubset,
    DEFAULT_MAX_BATCH_TOKENS, DEFAULT_MIN_BATCH_TOKENS,
};

pub use plan::{
    aggregate_plans, generate_plans, parse_numbered_list, parse_plan_json, LogicalPlan, PlanSource,
    DEFAULT_AGGREGATE_TEMPERATURE, DEFAULT_PLAN_SAMPLES, DEFAULT_PLAN_TEMPERATURE,
};
pub use profile::{profile_table, ExecutedQuery, RelevantColumn, TableObservation};
pub use prune::{
    batch_columns, expand_named, fuse_pruned, parse_deletion, parse_selection, prune_batch,
    NamedElements, PruneDecision,
};
pub use semantic::{parse_roles, semantic_link, RoleAnalysis, UNKNOWN_ROLE};
pub use synthesis::{global_synthesis, Rejection, SynthesisOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkingConfig {
    pub plan_samples: usize,
    pub plan_temperature: f64,
    pub aggregate_temperature: f64,
    pub min_batch_tokens: u64,
    pub max_batch_tokens: u64,
    pub max_refine_rounds: usize,
    /// Exploration statements executed per profiled table, at most.
    pub profile_query_cap: usize,
    pub profiling_parallelism: usize,
    pub parse_retries: usize,
    pub max_output_tokens: u64,
    /// Extra instructions placed in the role-analysis and profiling prompts.
    pub critical_rules: String,
    pub query_timeout_secs: u64,
    pub fetch_limit: usize,
}

impl Default for LinkingConfig {
    fn default() -> Self {
        Self {
            plan_samples: DEFAULT_PLAN_SAMPLES,
            plan_temperature: DEFAULT_PLAN_TEMPERATURE,
            aggregate_temperature: DEFAULT_AGGREGATE_TEMPERATURE,
            min_batch_tokens: DEFAULT_MIN_BATCH_TOKENS,
            max_batch_tokens: DEFAULT_MAX_BATCH_TOKENS,
            max_refine_rounds: 3,
            profile_query_cap: 8,
            profiling_parallelism: 8,
            parse_retries: DEFAULT_PARSE_RETRIES,
            max_output_tokens: 4096,
            critical_rules: String::new(),
            query_timeout_secs: 30,
            fetch_limit: DEFAULT_FETCH_LIMIT,
        }
    }
}

impl LinkingConfig {
    pub fn exec_options(&self) -> ExecOptions {
        ExecOptions {
            fetch_limit: self.fetch_limit,
            ..ExecOptions::read_only().with_timeout(Duration::from_secs(self.query_timeout_secs))
        }
    }
}

/// Everything the linker produced for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkingOutcome {
    pub subset: SchemaSubset,
    pub plan: LogicalPlan,
    pub candidates: Vec<LogicalPlan>,
    pub batch_count: usize,
    pub decisions: Vec<PruneDecision>,
    pub pruned: SchemaSubset,
    pub roles: RoleAnalysis,
    pub observations: Vec<TableObservation>,
    pub synthesis: SynthesisOutcome,
    pub token_usage: TokenLedger,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalColumn {
    pub table: String,
    pub column: String,
    pub reason: String,
}

/// The per-question linking report document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkingReport {
    pub question_id: String,
    pub plan: Vec<String>,
    pub pruned_count: usize,
    pub final_columns: Vec<FinalColumn>,
    pub rejected: Vec<Rejection>,
    pub rounds: usize,
    pub token_usage: TokenLedger,
}

impl LinkingOutcome {
    pub fn report(&self, question_id: &str) -> LinkingReport {
        LinkingReport {
            question_id: question_id.to_string(),
            plan: self.plan.steps.clone(),
            pruned_count: self.pruned.len(),
            final_columns: self
                .subset
                .refs()
                .iter()
                .map(|r| FinalColumn {
                    table: r.table.clone(),
                    column: r.column.clone(),
                    reason: self
                        .subset
                        .annotation(r)
                        .map(|a| a.reason.clone())
                        .unwrap_or_default(),
                })
                .collect(),
            rejected: self.synthesis.rejected.clone(),
            rounds: self.synthesis.rounds,
            token_usage: self.token_usage.clone(),
        }
    }
}

/// Tables of `schema` with at least one column in `subset`, restricted to
/// those columns, in schema order.
fn surviving_tables(schema: &DatabaseSchema, subset: &SchemaSubset) -> Vec<crate::schema::Table> {
    schema
        .tables
        .iter()
        .map(|t| t.restricted(|c| subset.contains(&crate::schema::ColumnRef::new(&t.name, &c.name))))
        .filter(|t| !t.columns.is_empty())
        .collect()
}

/// Runs the whole linker. Only transport-level gateway failures surface;
/// every parse failure falls back toward keeping columns.
pub fn link_schema(
    gateway: &Gateway,
    prompts: &Prompts,
    question: &str,
    evidence: &str,
    schema: &DatabaseSchema,
    db: &Database,
    config: &LinkingConfig,
) -> Result<LinkingOutcome, GatewayError> {
    let before = gateway.ledger();
    let out_tokens = config.max_output_tokens;

    let candidates = generate_plans(
        gateway,
        prompts,
        question,
        config.plan_samples,
        config.plan_temperature,
        out_tokens,
    )?;
    let plan = aggregate_plans(
        gateway,
        prompts,
        question,
        &candidates,
        config.aggregate_temperature,
        out_tokens,
    )?;

    let batches: Vec<SchemaBatch> = partition_batches(
        merge_identical_tables(schema),
        config.min_batch_tokens,
        config.max_batch_tokens,
        gateway.estimator(),
    );
    let mut decisions = Vec::with_capacity(batches.len());
    for (i, b) in batches.iter().enumerate() {
        decisions.push(prune_batch(
            gateway,
            prompts,
            question,
            evidence,
            &plan,
            b,
            i,
            config.parse_retries,
            out_tokens,
        )?);
    }
    let mut pruned = fuse_pruned(&batches, &decisions);
    if pruned.is_empty() {
        log::warn!("pruning removed every column; keeping the full schema");
        pruned = SchemaSubset::full(schema);
    }

    let roles = semantic_link(
        gateway,
        prompts,
        question,
        evidence,
        &plan,
        schema,
        &pruned,
        &config.critical_rules,
        config.parse_retries,
        out_tokens,
    )?;

    let tables = surviving_tables(schema, &pruned);
    let degree = config.profiling_parallelism.clamp(1, tables.len().max(1));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(degree)
        .build()
        .map_err(|e| GatewayError::InvalidRequest(format!("profiling pool: {e}")))?;
    let profiled: Vec<(Gateway, Result<TableObservation, GatewayError>)> = pool.install(|| {
        tables
            .par_iter()
            .map(|t| {
                let child = gateway.fork();
                let r = profile_table(&child, prompts, question, evidence, t, roles.role(&t.name), db, config);
                (child, r)
            })
            .collect()
    });
    let mut observations = Vec::with_capacity(profiled.len());
    let mut first_err = None;
    for (child, r) in profiled {
        gateway.absorb(child)?;
        match r {
            Ok(o) => observations.push(o),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }

    let synthesis = global_synthesis(
        gateway,
        prompts,
        question,
        evidence,
        &roles,
        &observations,
        schema,
        &pruned,
        db,
        config,
    )?;

    Ok(LinkingOutcome {
        subset: synthesis.subset.clone(),
        plan,
        candidates,
        batch_count: batches.len(),
        decisions,
        pruned,
        roles,
        observations,
        synthesis,
        token_usage: gateway.ledger().since(&before),
    })
}
