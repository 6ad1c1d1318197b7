//! Dataset adapters. Each reads one on-disk layout and yields task records.

use std::path::{Path, PathBuf};

use apexsql_core::pipeline::TaskRecord;
use serde_json::Value as Json;
use thiserror::Error;

use crate::config::{DatasetConfig, DatasetKind};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Missing(String),
}

/// Tasks plus anything worth telling the user about how they were read.
#[derive(Debug, Default)]
pub struct Loaded {
    pub tasks: Vec<TaskRecord>,
    pub notes: Vec<String>,
}

fn read(path: &Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|source| DatasetError::Read { path: path.to_path_buf(), source })
}

fn parse_json(path: &Path) -> Result<Json, DatasetError> {
    let text = read(path)?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Parse { path: path.to_path_buf(), message: e.to_string() })
}

fn text_field(v: &Json, keys: &[&str]) -> Option<String> {
    keys.iter().find_map(|k| match v.get(*k)? {
        Json::String(s) => Some(s.clone()),
        Json::Number(n) => Some(n.to_string()),
        _ => None,
    })
}

pub fn load(cfg: &DatasetConfig) -> Result<Loaded, DatasetError> {
    let path = cfg
        .path
        .as_deref()
        .ok_or_else(|| DatasetError::Missing("no dataset path configured (--dataset)".into()))?;
    match cfg.kind {
        DatasetKind::Tasks => load_tasks(path),
        DatasetKind::Bird => load_bird(path, cfg.db_root.as_deref()),
        DatasetKind::Spider => load_spider(path, cfg.db_root.as_deref()),
    }
}

/// A JSON list of task records; relative paths are taken from the file's
/// folder.
pub fn load_tasks(path: &Path) -> Result<Loaded, DatasetError> {
    let text = read(path)?;
    let mut tasks: Vec<TaskRecord> =
        serde_json::from_str(&text).map_err(|e| DatasetError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    let base = path.parent().unwrap_or(Path::new("."));
    for t in &mut tasks {
        if t.db_path.is_relative() {
            t.db_path = base.join(&t.db_path);
        }
        if let Some(k) = &mut t.knowledge_path {
            if k.is_relative() {
                *k = base.join(&*k);
            }
        }
    }
    Ok(Loaded { tasks, notes: Vec::new() })
}

/// A JSON list of `{question_id, db_id, question, evidence, SQL}` with
/// databases at `<db_root>/<db_id>/<db_id>.sqlite`.
pub fn load_bird(path: &Path, db_root: Option<&Path>) -> Result<Loaded, DatasetError> {
    let items = match parse_json(path)? {
        Json::Array(items) => items,
        _ => return Err(DatasetError::Parse { path: path.to_path_buf(), message: "expected a list of questions".into() }),
    };
    let root = db_root
        .map(Path::to_path_buf)
        .unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).join("dev_databases"));
    let mut tasks = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let db_id = text_field(item, &["db_id"])
            .ok_or_else(|| DatasetError::Parse { path: path.to_path_buf(), message: format!("entry {i} has no db_id") })?;
        tasks.push(TaskRecord {
            question_id: text_field(item, &["question_id"]).unwrap_or_else(|| i.to_string()),
            question: text_field(item, &["question"]).unwrap_or_default(),
            evidence: text_field(item, &["evidence"]).unwrap_or_default(),
            knowledge_path: None,
            db_path: root.join(&db_id).join(format!("{db_id}.sqlite")),
            gold_sql: text_field(item, &["SQL", "sql", "gold_sql"]),
            gold_columns: None,
        });
    }
    Ok(Loaded { tasks, notes: Vec::new() })
}

fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, DatasetError> {
    let entries = std::fs::read_dir(dir).map_err(|source| DatasetError::Read { path: dir.to_path_buf(), source })?;
    let mut out: Vec<PathBuf> = entries
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)))
        .collect();
    out.sort();
    Ok(out)
}

/// One folder per task holding `task.json` (`question` or `instruction`,
/// `db_id`, optional `evidence` and `gold_sql`), optionally `gold.sql`, and
/// any knowledge markdown. The database is `<db_root>/<db_id>.sqlite`, or a
/// `.sqlite` file inside the task folder.
pub fn load_spider(root: &Path, db_root: Option<&Path>) -> Result<Loaded, DatasetError> {
    let entries = std::fs::read_dir(root).map_err(|source| DatasetError::Read { path: root.to_path_buf(), source })?;
    let mut dirs: Vec<PathBuf> = entries.flatten().map(|e| e.path()).filter(|p| p.is_dir()).collect();
    dirs.sort();
    let mut loaded = Loaded::default();
    for dir in dirs {
        let spec_path = dir.join("task.json");
        if !spec_path.is_file() {
            loaded.notes.push(format!("{}: no task.json, skipped", dir.display()));
            continue;
        }
        let spec = parse_json(&spec_path)?;
        let folder_id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let id = text_field(&spec, &["instance_id", "question_id"]).unwrap_or(folder_id);
        let db_id = text_field(&spec, &["db_id", "db"]);
        let local_db = files_with_ext(&dir, "sqlite")?.into_iter().next();
        let db_path = match (db_id, db_root, local_db) {
            (_, _, Some(p)) => p,
            (Some(db), Some(r), None) => r.join(format!("{db}.sqlite")),
            (Some(db), None, None) => root.join(format!("{db}.sqlite")),
            (None, _, None) => {
                loaded.notes.push(format!("{id}: no database named, skipped"));
                continue;
            }
        };
        let docs = files_with_ext(&dir, "md")?;
        if docs.len() > 1 {
            let names: Vec<String> = docs.iter().filter_map(|d| d.file_name()).map(|n| n.to_string_lossy().into_owned()).collect();
            loaded.notes.push(format!("{id}: several knowledge files {names:?}; using the first"));
        }
        let gold_file = dir.join("gold.sql");
        let gold_sql = match text_field(&spec, &["gold_sql", "SQL", "sql"]) {
            Some(s) => Some(s),
            None if gold_file.is_file() => Some(read(&gold_file)?),
            None => None,
        };
        loaded.tasks.push(TaskRecord {
            question_id: id,
            question: text_field(&spec, &["question", "instruction"]).unwrap_or_default(),
            evidence: text_field(&spec, &["evidence"]).unwrap_or_default(),
            knowledge_path: docs.into_iter().next(),
            db_path,
            gold_sql,
            gold_columns: None,
        });
    }
    Ok(loaded)
}
