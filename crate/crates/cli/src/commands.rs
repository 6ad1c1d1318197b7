//! The subcommands. Each returns how the process should exit; per-task
//! failures are recorded and never stop the other tasks.

use std::io::{BufRead, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use apexsql_core::agent::EpisodeResult;
use apexsql_core::eval::{score_example, CandidateBundle, EvalReport, ExampleReport, VoteOutcome};
use apexsql_core::exec::ExecOptions;
use apexsql_core::guidance::Guidance;
use apexsql_core::linking::{link_schema, LogicalPlan};
use apexsql_core::llm::{Backend, Clock, HttpBackend, HttpConfig, ReplayBackend, ReplayScript};
use apexsql_core::pipeline::{
    failed_report, generate, gold_result, prepare_evidence, run_task, score_task, PipelineError,
    TaskOutcome, TaskRecord,
};
use apexsql_core::prompts::Prompts;
use apexsql_core::schema::{load_schema, SchemaSource, SchemaSubset};
use apexsql_core::{CompareMode, Database, Gateway};
use rayon::prelude::*;
use thiserror::Error;

use crate::artifacts::{file_stem, read_answer, ArtifactError, LinkedTask, RunDir, RunManifest};
use crate::config::{BackendKind, ConfigError, RunConfig};
use crate::datasets::{self, DatasetError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("{0}")]
    Setup(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success,
    PartialFailure,
}

impl Exit {
    fn from_failures(n: usize) -> Self {
        if n == 0 {
            Exit::Success
        } else {
            Exit::PartialFailure
        }
    }
}

/// Where each task's gateway gets its answers.
enum Source {
    Shared { backend: Arc<dyn Backend>, clock: Clock },
    /// `<dir>/<question_id>.json`, one replay script per task.
    PerTask(PathBuf),
}

impl Source {
    fn from_config(cfg: &RunConfig) -> Result<Self, CliError> {
        let b = &cfg.backend;
        match b.kind {
            BackendKind::Replay => {
                let path = b.replay.clone().ok_or_else(|| CliError::Setup("no replay script".into()))?;
                if path.is_dir() {
                    return Ok(Source::PerTask(path));
                }
                let script = ReplayScript::load(&path).map_err(|e| CliError::Setup(e.to_string()))?;
                Ok(Source::Shared { backend: Arc::new(ReplayBackend::new(script)), clock: Clock::Fixed(0) })
            }
            BackendKind::Http => {
                let config = HttpConfig {
                    base_url: b.endpoint.clone().unwrap_or_default(),
                    api_key: std::env::var(&b.key_env).ok().filter(|k| !k.is_empty()),
                    model: b.model.clone().unwrap_or_default(),
                    attempts: b.attempts.max(1),
                    initial_backoff: Duration::from_secs(1),
                    request_timeout: Duration::from_secs(b.request_timeout_secs),
                };
                Ok(Source::Shared { backend: Arc::new(HttpBackend::new(config)), clock: Clock::System })
            }
        }
    }

    /// A shared replay script is consumed in order, so its tasks must run
    /// one at a time.
    fn sequential(&self) -> bool {
        matches!(self, Source::Shared { clock: Clock::Fixed(_), .. })
    }

    fn gateway(&self, question_id: &str) -> Result<Gateway, String> {
        match self {
            Source::Shared { backend, clock } => Ok(Gateway::new(backend.clone()).with_clock(*clock)),
            Source::PerTask(dir) => {
                let path = dir.join(format!("{}.json", file_stem(question_id)));
                if !path.is_file() {
                    return Err(format!("no replay script at {}", path.display()));
                }
                ReplayScript::load(&path).map(Gateway::replay).map_err(|e| e.to_string())
            }
        }
    }
}

/// Prompts, guidance and backend shared by every task of a command.
struct Session {
    cfg: RunConfig,
    prompts: Prompts,
    guidance: Guidance,
    source: Source,
}

impl Session {
    fn new(cfg: RunConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let prompts = match &cfg.prompts_dir {
            Some(dir) => Prompts::with_overrides(dir).map_err(|e| CliError::Setup(e.to_string()))?,
            None => Prompts::default(),
        };
        let guidance = if cfg.tips_file.is_some() || cfg.rules_file.is_some() {
            Guidance::load(cfg.tips_file.as_deref(), cfg.rules_file.as_deref()).map_err(|e| CliError::Setup(e.to_string()))?
        } else {
            Guidance::builtin()
        };
        let source = Source::from_config(&cfg)?;
        Ok(Self { cfg, prompts, guidance, source })
    }

    /// Runs `f` on every task in a bounded pool, keeping input order. A
    /// panic inside `f` becomes that task's error.
    fn for_each_task<T, F>(&self, tasks: &[TaskRecord], f: F) -> Result<Vec<Result<T, String>>, CliError>
    where
        T: Send,
        F: Fn(&TaskRecord) -> Result<T, String> + Sync,
    {
        let threads = if self.source.sequential() { 1 } else { self.cfg.task_parallelism };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Setup(format!("task pool: {e}")))?;
        let isolated = |t: &TaskRecord| {
            catch_unwind(AssertUnwindSafe(|| f(t))).unwrap_or_else(|panic| {
                let msg = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "unknown panic".into());
                Err(format!("task crashed: {msg}"))
            })
        };
        Ok(pool.install(|| tasks.par_iter().map(isolated).collect()))
    }

    /// Opens a gateway, runs `f` with it, and saves its trace either way.
    fn traced<T>(
        &self,
        dir: &RunDir,
        task: &TaskRecord,
        f: impl FnOnce(&Gateway) -> Result<T, PipelineError>,
    ) -> Result<T, String> {
        let gw = self.source.gateway(&task.question_id)?;
        let out = catch_unwind(AssertUnwindSafe(|| f(&gw)));
        dir.write_text(&dir.trace_path(&task.question_id), &gw.trace_jsonl())
            .map_err(|e| e.to_string())?;
        match out {
            Ok(r) => r.map_err(|e| e.to_string()),
            Err(p) => std::panic::resume_unwind(p),
        }
    }
}

fn dataset_name(cfg: &RunConfig) -> String {
    cfg.dataset
        .path
        .as_deref()
        .and_then(Path::file_name)
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "tasks".into())
}

fn load_tasks(cfg: &RunConfig) -> Result<Vec<TaskRecord>, CliError> {
    let loaded = datasets::load(&cfg.dataset)?;
    for note in &loaded.notes {
        log::warn!("{note}");
    }
    if loaded.tasks.is_empty() {
        return Err(CliError::Setup("the dataset has no tasks".into()));
    }
    Ok(loaded.tasks)
}

fn open_run(cfg: &RunConfig, run_id: &str) -> Result<RunDir, CliError> {
    let dir = RunDir::create(cfg.output_dir.join(run_id))?;
    dir.write_config(&cfg.snapshot())?;
    Ok(dir)
}

/// Writes per-task results and scores them in task order.
fn finish(
    dir: &RunDir,
    manifest: &RunManifest,
    results: Vec<Result<TaskOutcome, String>>,
) -> Result<(EvalReport, usize), CliError> {
    let mut reports = Vec::with_capacity(results.len());
    let mut failures = 0;
    for (task, result) in manifest.tasks.iter().zip(results) {
        match result {
            Ok(outcome) => {
                dir.write_outcome(&outcome)?;
                reports.push(score_task(task, &outcome, manifest.mode));
            }
            Err(e) => {
                failures += 1;
                log::error!("{}: {e}", task.question_id);
                dir.write_error(&task.question_id, &e)?;
                reports.push(failed_report(&task.question_id, &e, !manifest.oracle_schema));
            }
        }
    }
    let report = EvalReport::build(&manifest.dataset, manifest.mode, reports);
    dir.write_report(&report)?;
    Ok((report, failures))
}

pub fn run(cfg: RunConfig, run_id: &str, oracle_schema: bool) -> Result<Exit, CliError> {
    let tasks = load_tasks(&cfg)?;
    let session = Session::new(cfg)?;
    let dir = open_run(&session.cfg, run_id)?;
    let manifest = RunManifest {
        dataset: dataset_name(&session.cfg),
        mode: session.cfg.mode(),
        oracle_schema,
        tasks,
    };
    dir.write_manifest(&manifest)?;
    let s = &session;
    let results = s.for_each_task(&manifest.tasks, |task| {
        s.traced(&dir, task, |gw| run_task(gw, &s.prompts, &s.guidance, task, &s.cfg.pipeline, oracle_schema))
    })?;
    let (report, failures) = finish(&dir, &manifest, results)?;
    print!("{}", report.render_table());
    println!("run folder: {}", dir.root().display());
    Ok(Exit::from_failures(failures))
}

fn link_one(s: &Session, gw: &Gateway, task: &TaskRecord) -> Result<LinkedTask, PipelineError> {
    task.validate()?;
    let db = Database::open(&task.db_path)?;
    let schema = load_schema(&SchemaSource::Sqlite(task.db_path.clone()))?;
    let evidence = prepare_evidence(gw, &s.prompts, task, &s.cfg.pipeline.generation)?;
    let outcome = link_schema(gw, &s.prompts, &task.question, &evidence, &schema, &db, &s.cfg.pipeline.linking)?;
    Ok(LinkedTask { question_id: task.question_id.clone(), evidence, outcome })
}

pub fn link(cfg: RunConfig, run_id: &str) -> Result<Exit, CliError> {
    let tasks = load_tasks(&cfg)?;
    let session = Session::new(cfg)?;
    let dir = open_run(&session.cfg, run_id)?;
    let manifest = RunManifest {
        dataset: dataset_name(&session.cfg),
        mode: session.cfg.mode(),
        oracle_schema: false,
        tasks,
    };
    dir.write_manifest(&manifest)?;
    let s = &session;
    let results = s.for_each_task(&manifest.tasks, |task| s.traced(&dir, task, |gw| link_one(s, gw, task)))?;
    let mut failures = 0;
    for (task, r) in manifest.tasks.iter().zip(results) {
        match r {
            Ok(linked) => {
                dir.write_linked(&linked)?;
                println!("{}: {} columns", task.question_id, linked.outcome.subset.len());
            }
            Err(e) => {
                failures += 1;
                log::error!("{}: {e}", task.question_id);
                dir.write_error(&task.question_id, &e)?;
            }
        }
    }
    println!("run folder: {}", dir.root().display());
    Ok(Exit::from_failures(failures))
}

/// Generation over subsets from an earlier `link` run, or over gold columns.
pub fn generate_cmd(cfg: RunConfig, run_id: &str, linked: Option<&Path>, oracle_schema: bool) -> Result<Exit, CliError> {
    let linked_dir = linked.map(|p| RunDir::open(p.to_path_buf()));
    let tasks = match &linked_dir {
        Some(d) => d.read_manifest()?.tasks,
        None if oracle_schema => load_tasks(&cfg)?,
        None => return Err(CliError::Setup("generate needs --linked <run folder> or --oracle-schema".into())),
    };
    let session = Session::new(cfg)?;
    let dir = open_run(&session.cfg, run_id)?;
    let manifest = RunManifest {
        dataset: dataset_name(&session.cfg),
        mode: session.cfg.mode(),
        oracle_schema,
        tasks,
    };
    dir.write_manifest(&manifest)?;
    let s = &session;
    let results = s.for_each_task(&manifest.tasks, |task| {
        let prior = match (&linked_dir, oracle_schema) {
            (Some(d), false) => Some(d.read_linked(&task.question_id).map_err(|e| e.to_string())?),
            _ => None,
        };
        if prior.is_none() {
            return s.traced(&dir, task, |gw| run_task(gw, &s.prompts, &s.guidance, task, &s.cfg.pipeline, true));
        }
        let prior = prior.expect("checked above");
        s.traced(&dir, task, |gw| {
            task.validate()?;
            let db = Database::open(&task.db_path)?;
            let schema = load_schema(&SchemaSource::Sqlite(task.db_path.clone()))?;
            let l = &prior.outcome;
            let generation = generate(
                gw,
                &s.prompts,
                &s.guidance,
                &task.question,
                &prior.evidence,
                &l.plan,
                &schema,
                &l.subset,
                &db,
                &s.cfg.pipeline.generation,
            )?;
            let mut token_usage = l.token_usage.clone();
            token_usage.merge(&generation.token_usage);
            Ok(TaskOutcome {
                question_id: task.question_id.clone(),
                evidence: prior.evidence.clone(),
                subset: l.subset.clone(),
                linking: Some(l.clone()),
                generation,
                token_usage,
            })
        })
    })?;
    let (report, failures) = finish(&dir, &manifest, results)?;
    print!("{}", report.render_table());
    println!("run folder: {}", dir.root().display());
    Ok(Exit::from_failures(failures))
}

/// Rescores a finished run from its saved outcomes.
pub fn eval_run(run: &Path, mode: Option<CompareMode>) -> Result<EvalReport, CliError> {
    let dir = RunDir::open(run.to_path_buf());
    let manifest = dir.read_manifest()?;
    let mode = mode.unwrap_or(manifest.mode);
    let mut reports = Vec::with_capacity(manifest.tasks.len());
    for task in &manifest.tasks {
        let id = &task.question_id;
        let report = match dir.read_outcome(id)? {
            Some(outcome) => score_task(task, &outcome, mode),
            None => {
                let err = dir.read_error(id).unwrap_or_else(|| "no outcome recorded".into());
                failed_report(id, &err, !manifest.oracle_schema)
            }
        };
        reports.push(report);
    }
    Ok(EvalReport::build(&manifest.dataset, mode, reports))
}

/// Scores one answer file per task as a single candidate.
pub fn eval_answers(cfg: &RunConfig, answers: &Path, mode: Option<CompareMode>) -> Result<EvalReport, CliError> {
    let tasks = load_tasks(cfg)?;
    let mode = mode.unwrap_or_else(|| cfg.mode());
    let reports = tasks.iter().map(|t| score_answer(t, answers, mode)).collect();
    Ok(EvalReport::build(&dataset_name(cfg), mode, reports))
}

fn score_answer(task: &TaskRecord, answers: &Path, mode: CompareMode) -> ExampleReport {
    let id = &task.question_id;
    let Some(sql) = read_answer(answers, id) else {
        return failed_report(id, "no answer file", false);
    };
    let result = Database::open(&task.db_path).and_then(|db| db.execute(&sql, &ExecOptions::final_mode()));
    let failed = result.is_err();
    let episode = EpisodeResult {
        final_sql: Some(sql),
        final_result: result.ok(),
        rounds: 0,
        query_count: 0,
        confirmed: true,
        failed,
        action_count: 0,
        token_count: 0,
        trace: Vec::new(),
    };
    let bundle = CandidateBundle::new(vec![episode]);
    let vote = VoteOutcome { index: 0, unselectable: failed, tied: Vec::new(), model_pick: false };
    let gold = gold_result(task);
    ExampleReport {
        question_id: id.clone(),
        linking: None,
        generation: Some(score_example(&bundle, &vote, gold.as_ref().map_err(Clone::clone), mode)),
        tokens: 0,
        error: None,
    }
}

const REPL_HELP: &str = "Type a question to answer it against the database.
  :evidence <text>  set evidence for the following questions (empty clears it)
  :trace            show the model calls of the last question
  :help             show this help
  :quit             leave
";

/// Interactive question answering over one database with a single sample.
pub fn repl(mut cfg: RunConfig, db_path: &Path, input: impl BufRead, mut out: impl Write) -> Result<Exit, CliError> {
    cfg.pipeline.generation.samples = 1;
    cfg.pipeline.generation.episode_parallelism = 1;
    let session = Session::new(cfg)?;
    if matches!(session.source, Source::PerTask(_)) {
        return Err(CliError::Setup("the repl needs a single replay script, not a folder".into()));
    }
    let db = Database::open(db_path).map_err(|e| CliError::Setup(e.to_string()))?;
    let schema = load_schema(&SchemaSource::Sqlite(db_path.to_path_buf())).map_err(|e| CliError::Setup(e.to_string()))?;
    let gw = session.source.gateway("repl").map_err(CliError::Setup)?;
    let mut evidence = String::new();
    let mut last_trace = 0..0;
    writeln!(out, "{} tables loaded. :help for commands.", schema.tables.len())?;
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        match line {
            "" => continue,
            ":quit" | ":q" => break,
            ":help" => write!(out, "{REPL_HELP}")?,
            ":trace" => {
                let records = gw.trace();
                for r in records.get(last_trace.clone()).unwrap_or_default() {
                    writeln!(out, "{}", serde_json::to_string(r).unwrap_or_default())?;
                }
            }
            _ if line.starts_with(":evidence") => {
                evidence = line.trim_start_matches(":evidence").trim().to_string();
            }
            _ if line.starts_with(':') => writeln!(out, "unknown command {line}; :help lists them")?,
            question => {
                let start = gw.trace_len();
                let answer = answer_question(&session, &gw, &db, &schema, question, &evidence);
                last_trace = start..gw.trace_len();
                match answer {
                    Ok(text) => write!(out, "{text}")?,
                    Err(e) => writeln!(out, "error: {e}")?,
                }
            }
        }
        out.flush()?;
    }
    Ok(Exit::Success)
}

fn answer_question(
    s: &Session,
    gw: &Gateway,
    db: &Database,
    schema: &apexsql_core::DatabaseSchema,
    question: &str,
    evidence: &str,
) -> Result<String, PipelineError> {
    let linked = link_schema(gw, &s.prompts, question, evidence, schema, db, &s.cfg.pipeline.linking)?;
    let subset: &SchemaSubset = &linked.subset;
    let plan: &LogicalPlan = &linked.plan;
    let g = generate(gw, &s.prompts, &s.guidance, question, evidence, plan, schema, subset, db, &s.cfg.pipeline.generation)?;
    let e = g.selected();
    let mut text = String::new();
    match &g.final_sql {
        Some(sql) => text.push_str(&format!("SQL:\n{sql}\n")),
        None => text.push_str("no SQL produced\n"),
    }
    if let Some(r) = &g.final_result {
        text.push_str(&r.render());
        text.push_str(&format!("({} rows)\n", r.row_count()));
    }
    text.push_str(&format!(
        "rounds: {}, queries: {}, actions: {}, tokens: {}\n",
        e.rounds,
        e.query_count,
        e.action_count,
        g.token_usage.total().total()
    ));
    Ok(text)
}
