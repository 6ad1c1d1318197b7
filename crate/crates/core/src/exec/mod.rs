//! SQL execution against SQLite files with read-only enforcement, result
//! summaries and canonical comparison.

mod canon;
mod dialect;
pub mod split;
mod summary;

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use canon::{
    canonical_cell, canonicalize, compare, CompareMode, DEFAULT_FLOAT_PRECISION, EMPTY_RESULT_KEY,
};
pub use dialect::{Dialect, SqliteDialect};
pub use summary::{summarize, ColumnStats, Observation, ResultSummary, HEAD_ROWS, SUMMARY_THRESHOLD};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_FETCH_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    #[serde(skip_deserializing)]
    Blob(Vec<u8>),
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Null => s.serialize_none(),
            Value::Integer(i) => s.serialize_i64(*i),
            Value::Real(r) => s.serialize_f64(*r),
            Value::Text(t) => s.serialize_str(t),
            Value::Blob(_) => s.serialize_str(&self.to_string()),
        }
    }
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Null => "NULL",
            Value::Integer(_) => "INTEGER",
            Value::Real(_) => "REAL",
            Value::Text(_) => "TEXT",
            Value::Blob(_) => "BLOB",
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r}"),
            Value::Text(s) => f.write_str(s),
            Value::Blob(b) => {
                f.write_str("x'")?;
                for byte in b {
                    write!(f, "{byte:02x}")?;
                }
                f.write_str("'")
            }
        }
    }
}

impl From<ValueRef<'_>> for Value {
    fn from(v: ValueRef<'_>) -> Self {
        match v {
            ValueRef::Null => Value::Null,
            ValueRef::Integer(i) => Value::Integer(i),
            ValueRef::Real(r) => Value::Real(r),
            ValueRef::Text(t) => Value::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => Value::Blob(b.to_vec()),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Integer(v)
    }
}

impl From<i32> for Value {
    fn from(v: i32) -> Self {
        Value::Integer(v.into())
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Real(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultColumn {
    pub name: String,
    #[serde(rename = "type")]
    pub data_type: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultSet {
    pub columns: Vec<ResultColumn>,
    pub rows: Vec<Vec<Value>>,
    #[serde(default)]
    pub truncated: bool,
}

impl ResultSet {
    /// Builds a result from column names and rows; column types are inferred
    /// from the values.
    pub fn from_rows(names: &[&str], rows: Vec<Vec<Value>>) -> Self {
        let mut rs = ResultSet {
            columns: names
                .iter()
                .map(|n| ResultColumn {
                    name: n.to_string(),
                    data_type: String::new(),
                })
                .collect(),
            rows,
            truncated: false,
        };
        for i in 0..rs.columns.len() {
            rs.columns[i].data_type = summary::infer_type(rs.rows.iter().map(|r| &r[i])).to_string();
        }
        rs
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn column(&self, i: usize) -> impl Iterator<Item = &Value> {
        self.rows.iter().map(move |r| &r[i])
    }

    /// Plain-text table for prompts: a header line and one line per row.
    pub fn render(&self) -> String {
        render_rows(&self.columns, &self.rows)
    }
}

pub(crate) fn render_rows(columns: &[ResultColumn], rows: &[Vec<Value>]) -> String {
    let mut out = columns
        .iter()
        .map(|c| c.name.as_str())
        .collect::<Vec<_>>()
        .join(" | ");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(" | "));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecErrorKind {
    Syntax,
    MissingObject,
    TypeError,
    Timeout,
    WriteRejected,
    Other,
}

impl fmt::Display for ExecErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExecErrorKind::Syntax => "syntax",
            ExecErrorKind::MissingObject => "missing_object",
            ExecErrorKind::TypeError => "type_error",
            ExecErrorKind::Timeout => "timeout",
            ExecErrorKind::WriteRejected => "write_rejected",
            ExecErrorKind::Other => "other",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{kind} error: {message}")]
pub struct ExecError {
    pub kind: ExecErrorKind,
    pub message: String,
}

impl ExecError {
    pub fn new(kind: ExecErrorKind, message: impl Into<String>) -> Self {
        let mut message = message.into();
        if message.trim().is_empty() {
            message = kind.to_string();
        }
        Self { kind, message }
    }

    fn from_sqlite(e: rusqlite::Error, timed_out: bool) -> Self {
        if timed_out {
            return Self::new(ExecErrorKind::Timeout, "query exceeded the time limit");
        }
        let message = e.to_string();
        let lower = message.to_lowercase();
        let kind = if lower.contains("interrupted") {
            ExecErrorKind::Timeout
        } else if lower.contains("no such table")
            || lower.contains("no such column")
            || lower.contains("no such function")
            || lower.contains("ambiguous column")
        {
            ExecErrorKind::MissingObject
        } else if lower.contains("syntax error")
            || lower.contains("incomplete input")
            || lower.contains("unrecognized token")
            || lower.contains("near \"")
        {
            ExecErrorKind::Syntax
        } else if lower.contains("datatype mismatch")
            || lower.contains("malformed json")
            || lower.contains("wrong number of arguments")
            || lower.contains("invalid column type")
        {
            ExecErrorKind::TypeError
        } else if lower.contains("readonly") || lower.contains("read-only") {
            ExecErrorKind::WriteRejected
        } else {
            ExecErrorKind::Other
        };
        Self::new(kind, message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    /// Exploration: a single query only, read-only connection.
    #[default]
    ReadOnly,
    /// Final answer execution. Query-only unless writes are explicitly allowed.
    Final,
}

#[derive(Debug, Clone)]
pub struct ExecOptions {
    pub mode: ExecMode,
    pub timeout: Duration,
    pub fetch_limit: usize,
    /// Lets `Final` mode run statements that modify the database.
    pub allow_writes_in_final: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self {
            mode: ExecMode::ReadOnly,
            timeout: DEFAULT_TIMEOUT,
            fetch_limit: DEFAULT_FETCH_LIMIT,
            allow_writes_in_final: false,
        }
    }
}

impl ExecOptions {
    pub fn read_only() -> Self {
        Self::default()
    }

    pub fn final_mode() -> Self {
        Self {
            mode: ExecMode::Final,
            ..Self::default()
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

/// A SQLite database file. Each execution opens its own connection, so a
/// `Database` can be shared freely across threads.
#[derive(Debug, Clone)]
pub struct Database {
    path: PathBuf,
}

const QUERY_KEYWORDS: &[&str] = &["SELECT", "WITH", "VALUES", "EXPLAIN"];

impl Database {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ExecError> {
        let path = path.as_ref().to_path_buf();
        if !path.is_file() {
            return Err(ExecError::new(
                ExecErrorKind::Other,
                format!("database file not found: {}", path.display()),
            ));
        }
        Ok(Self { path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn dialect(&self) -> &'static dyn Dialect {
        &SqliteDialect
    }

    pub fn execute(&self, sql: &str, opts: &ExecOptions) -> Result<ResultSet, ExecError> {
        let writes_allowed = opts.mode == ExecMode::Final && opts.allow_writes_in_final;
        let statements = split::split_statements(sql);
        let statement = match statements.as_slice() {
            [] => return Err(ExecError::new(ExecErrorKind::Syntax, "empty statement")),
            [one] => one.as_str(),
            _ if writes_allowed => sql,
            _ => {
                return Err(ExecError::new(
                    ExecErrorKind::WriteRejected,
                    "only a single query statement may be executed",
                ))
            }
        };
        if !writes_allowed {
            check_query_class(statement)?;
        }
        let flags = if writes_allowed {
            OpenFlags::SQLITE_OPEN_READ_WRITE | OpenFlags::SQLITE_OPEN_NO_MUTEX
        } else {
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX
        };
        let conn = Connection::open_with_flags(&self.path, flags)
            .map_err(|e| ExecError::from_sqlite(e, false))?;
        if writes_allowed && statements.len() > 1 {
            conn.execute_batch(sql)
                .map_err(|e| ExecError::from_sqlite(e, false))?;
            return Ok(ResultSet::default());
        }
        run_query(&conn, statement, opts, !writes_allowed)
    }
}

/// Result of an exploration query: the summarized rows or the error, kept
/// as a value so the caller can show it to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum QueryOutcome {
    Ok { observation: Observation },
    Error { error: ExecError },
}

impl QueryOutcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, QueryOutcome::Ok { .. })
    }

    pub fn render(&self) -> String {
        match self {
            QueryOutcome::Ok { observation } => observation.render(),
            QueryOutcome::Error { error } => format!("Error ({}): {}", error.kind, error.message),
        }
    }
}

impl Database {
    /// Runs one query with read-only enforcement and summarizes the result.
    pub fn explore(&self, sql: &str, opts: &ExecOptions) -> QueryOutcome {
        let opts = ExecOptions {
            mode: ExecMode::ReadOnly,
            allow_writes_in_final: false,
            ..opts.clone()
        };
        match self.execute(sql, &opts) {
            Ok(rs) => QueryOutcome::Ok {
                observation: summarize(rs),
            },
            Err(error) => QueryOutcome::Error { error },
        }
    }
}

fn check_query_class(statement: &str) -> Result<(), ExecError> {
    let keyword = split::leading_keyword(statement).unwrap_or_default();
    if QUERY_KEYWORDS.contains(&keyword.as_str()) {
        return Ok(());
    }
    if keyword == "PRAGMA" && !split::strip_comments(statement).contains('=') {
        return Ok(());
    }
    Err(ExecError::new(
        ExecErrorKind::WriteRejected,
        format!("statement class {keyword:?} is not allowed; only queries may run"),
    ))
}

fn run_query(
    conn: &Connection,
    sql: &str,
    opts: &ExecOptions,
    require_readonly: bool,
) -> Result<ResultSet, ExecError> {
    let deadline = Instant::now() + opts.timeout;
    let fired = Arc::new(AtomicBool::new(false));
    {
        let fired = Arc::clone(&fired);
        conn.progress_handler(
            1000,
            Some(move || {
                if Instant::now() >= deadline {
                    fired.store(true, Ordering::SeqCst);
                    true
                } else {
                    false
                }
            }),
        );
    }
    let timed_out = || fired.load(Ordering::SeqCst);
    let mut stmt = conn
        .prepare(sql)
        .map_err(|e| ExecError::from_sqlite(e, timed_out()))?;
    if require_readonly && !stmt.readonly() {
        return Err(ExecError::new(
            ExecErrorKind::WriteRejected,
            "statement would modify the database",
        ));
    }
    let names: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
    let declared: Vec<Option<String>> = stmt
        .columns()
        .iter()
        .map(|c| c.decl_type().map(|t| t.to_string()))
        .collect();
    let width = names.len();
    let mut rows = Vec::new();
    let mut truncated = false;
    {
        let mut cursor = stmt
            .query([])
            .map_err(|e| ExecError::from_sqlite(e, timed_out()))?;
        loop {
            match cursor.next() {
                Ok(Some(row)) => {
                    if rows.len() >= opts.fetch_limit {
                        truncated = true;
                        break;
                    }
                    let mut values = Vec::with_capacity(width);
                    for i in 0..width {
                        let v = row
                            .get_ref(i)
                            .map_err(|e| ExecError::from_sqlite(e, timed_out()))?;
                        values.push(Value::from(v));
                    }
                    rows.push(values);
                }
                Ok(None) => break,
                Err(e) => return Err(ExecError::from_sqlite(e, timed_out())),
            }
        }
    }
    let columns = names
        .into_iter()
        .zip(declared)
        .enumerate()
        .map(|(i, (name, decl))| ResultColumn {
            name,
            data_type: decl
                .filter(|d| !d.is_empty())
                .unwrap_or_else(|| summary::infer_type(rows.iter().map(|r| &r[i])).to_string()),
        })
        .collect();
    Ok(ResultSet {
        columns,
        rows,
        truncated,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn scratch_db(setup: &str) -> (tempfile::TempDir, Database) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db.sqlite");
        Connection::open(&path).unwrap().execute_batch(setup).unwrap();
        let db = Database::open(&path).unwrap();
        (dir, db)
    }

    #[test]
    fn select_one() {
        let (_d, db) = scratch_db("CREATE TABLE t(a INT);");
        let rs = db.execute("SELECT 1", &ExecOptions::read_only()).unwrap();
        assert_eq!(rs.rows, vec![vec![Value::Integer(1)]]);
        assert_eq!(rs.columns.len(), 1);
    }

    #[test]
    fn writes_rejected() {
        let (_d, db) = scratch_db("CREATE TABLE t(a INT); INSERT INTO t VALUES (1);");
        for sql in [
            "DROP TABLE t",
            "INSERT INTO t VALUES (2)",
            "SELECT 1; DELETE FROM t",
            "WITH x AS (SELECT 1) DELETE FROM t",
            "PRAGMA user_version = 3",
        ] {
            let err = db.execute(sql, &ExecOptions::read_only()).unwrap_err();
            assert_eq!(err.kind, ExecErrorKind::WriteRejected, "{sql}");
            let err = db.execute(sql, &ExecOptions::final_mode()).unwrap_err();
            assert_eq!(err.kind, ExecErrorKind::WriteRejected, "{sql}");
        }
        let rs = db.execute("SELECT count(*) FROM t", &ExecOptions::read_only()).unwrap();
        assert_eq!(rs.rows[0][0], Value::Integer(1));
    }

    #[test]
    fn final_mode_opt_out_allows_writes() {
        let (_d, db) = scratch_db("CREATE TABLE t(a INT);");
        let opts = ExecOptions {
            allow_writes_in_final: true,
            ..ExecOptions::final_mode()
        };
        db.execute("INSERT INTO t VALUES (5)", &opts).unwrap();
        let rs = db.execute("SELECT a FROM t", &ExecOptions::read_only()).unwrap();
        assert_eq!(rs.rows[0][0], Value::Integer(5));
    }

    #[test]
    fn error_kinds() {
        let (_d, db) = scratch_db("CREATE TABLE t(a INT);");
        let ro = ExecOptions::read_only();
        assert_eq!(db.execute("SELECT * FROM nope", &ro).unwrap_err().kind, ExecErrorKind::MissingObject);
        assert_eq!(db.execute("SELECT b FROM t", &ro).unwrap_err().kind, ExecErrorKind::MissingObject);
        assert_eq!(db.execute("SELECT FROM WHERE", &ro).unwrap_err().kind, ExecErrorKind::Syntax);
        assert_eq!(db.execute("", &ro).unwrap_err().kind, ExecErrorKind::Syntax);
    }

    #[test]
    fn timeout_surfaces_as_value() {
        let (_d, db) = scratch_db("CREATE TABLE t(a INT);");
        let opts = ExecOptions::read_only().with_timeout(Duration::from_millis(50));
        let sql = "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) \
                   SELECT count(*) FROM c";
        assert_eq!(db.execute(sql, &opts).unwrap_err().kind, ExecErrorKind::Timeout);
    }

    #[test]
    fn fetch_ceiling_truncates() {
        let (_d, db) = scratch_db("CREATE TABLE t(a INT);");
        let opts = ExecOptions {
            fetch_limit: 5,
            ..ExecOptions::read_only()
        };
        let sql = "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c WHERE x < 20) SELECT x FROM c";
        let rs = db.execute(sql, &opts).unwrap();
        assert_eq!(rs.rows.len(), 5);
        assert!(rs.truncated);
    }
}
