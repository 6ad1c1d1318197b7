mod artifacts;
mod commands;
mod config;
mod datasets;

use std::path::PathBuf;
use std::process::ExitCode;

use apexsql_core::CompareMode;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::{CliError, Exit};
use crate::config::{DatasetKind, RunConfig};

#[derive(Parser)]
#[command(name = "apexsql", version, about = "Answer natural-language questions with SQL")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML or JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Task file or task folder; overrides the configuration.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    dataset_kind: Option<DatasetKind>,
    #[arg(long, global = true)]
    db_root: Option<PathBuf>,
    /// Replay script, or folder of per-task scripts.
    #[arg(long, global = true)]
    replay: Option<PathBuf>,
    /// Samples per question.
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Folder that receives run folders.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Name of the run folder; defaults to one derived from the clock.
    #[arg(long, global = true)]
    run_id: Option<String>,
    /// Tasks processed at once.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Strict,
    Relaxed,
}

impl From<ModeArg> for CompareMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Strict => CompareMode::Strict,
            ModeArg::Relaxed => CompareMode::Relaxed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Schema linking only; saves the column subsets.
    Link,
    /// Generation over subsets saved by `link`, or over gold columns.
    Generate {
        #[arg(long)]
        linked: Option<PathBuf>,
        #[arg(long)]
        oracle_schema: bool,
    },
    /// Linking, generation and scoring.
    Run {
        /// Skip linking and use each task's gold columns.
        #[arg(long)]
        oracle_schema: bool,
    },
    /// Scores a finished run, or a folder of `<question_id>.sql` answers.
    Eval {
        #[arg(long, conflicts_with = "answers")]
        from: Option<PathBuf>,
        #[arg(long)]
        answers: Option<PathBuf>,
        /// Also write the report as JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Ask questions interactively against one database.
    Repl {
        #[arg(long)]
        db: PathBuf,
    },
}

fn build_config(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env();
    if let Some(d) = &c.dataset {
        cfg.dataset.path = Some(d.clone());
    }
    if let Some(k) = c.dataset_kind {
        cfg.dataset.kind = k;
    }
    if let Some(r) = &c.db_root {
        cfg.dataset.db_root = Some(r.clone());
    }
    if let Some(r) = &c.replay {
        cfg.backend.replay = Some(r.clone());
    }
    if let Some(n) = c.n {
        cfg.pipeline.generation.samples = n;
    }
    if let Some(m) = c.mode {
        cfg.mode = Some(m.into());
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    if let Some(p) = c.parallelism {
        cfg.task_parallelism = p;
    }
    Ok(cfg)
}

fn default_run_id() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("run-{secs}")
}

fn dispatch(cli: Cli) -> Result<Exit, CliError> {
    let cfg = build_config(&cli.common)?;
    let run_id = cli.common.run_id.clone().unwrap_or_else(default_run_id);
    let mode = cli.common.mode.map(CompareMode::from);
    match cli.command {
        Command::Link => commands::link(cfg, &run_id),
        Command::Generate { linked, oracle_schema } => commands::generate_cmd(cfg, &run_id, linked.as_deref(), oracle_schema),
        Command::Run { oracle_schema } => commands::run(cfg, &run_id, oracle_schema),
        Command::Eval { from, answers, report } => {
            let r = match (from, answers) {
                (Some(dir), _) => commands::eval_run(&dir, mode)?,
                (None, Some(dir)) => commands::eval_answers(&cfg, &dir, mode)?,
                (None, None) => return Err(CliError::Setup("eval needs --from <run folder> or --answers <folder>".into())),
            };
            if let Some(path) = report {
                std::fs::write(&path, r.to_json() + "\n")?;
            }
            print!("{}", r.render_table());
            Ok(Exit::Success)
        }
        Command::Repl { db } => {
            let stdin = std::io::stdin();
            commands::repl(cfg, &db, stdin.lock(), std::io::stdout())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(Exit::Success) => ExitCode::SUCCESS,
        Ok(Exit::PartialFailure) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
