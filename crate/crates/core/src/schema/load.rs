use std::path::{Path, PathBuf};

use rusqlite::{Connection, OpenFlags};
use serde::Deserialize;

use super::{Column, DatabaseSchema, ForeignKey, SchemaError, Table, DEFAULT_SAMPLE_CAP};

/// Where a schema comes from.
#[derive(Debug, Clone)]
pub enum SchemaSource {
    /// A JSON schema document on disk.
    Document(PathBuf),
    /// A JSON schema document held in memory.
    DocumentText(String),
    /// A SQLite database file, introspected read-only.
    Sqlite(PathBuf),
}

impl SchemaSource {
    /// Picks the source kind from the file extension: `.json` is a document,
    /// anything else is treated as a database file.
    pub fn from_path(path: impl AsRef<Path>) -> Self {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Self::Document(path.to_path_buf()),
            _ => Self::Sqlite(path.to_path_buf()),
        }
    }
}

pub fn load_schema(source: &SchemaSource) -> Result<DatabaseSchema, SchemaError> {
    match source {
        SchemaSource::Document(path) => load_schema_document(path),
        SchemaSource::DocumentText(text) => parse_schema_document(text),
        SchemaSource::Sqlite(path) => introspect_sqlite(path, DEFAULT_SAMPLE_CAP),
    }
}

pub fn load_schema_document(path: &Path) -> Result<DatabaseSchema, SchemaError> {
    let text = std::fs::read_to_string(path)?;
    parse_schema_document(&text)
}

#[derive(Deserialize)]
struct DocSchema {
    name: String,
    tables: Vec<DocTable>,
}

#[derive(Deserialize)]
struct DocTable {
    name: String,
    columns: Vec<DocColumn>,
    #[serde(default)]
    primary_key: Option<DocKey>,
    #[serde(default)]
    foreign_keys: Vec<DocForeignKey>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DocKey {
    One(String),
    Many(Vec<String>),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DocForeignKey {
    Object {
        column: String,
        foreign_table: String,
        foreign_column: String,
    },
    Triple(String, String, String),
}

#[derive(Deserialize)]
struct DocColumn {
    name: String,
    #[serde(rename = "type", default)]
    data_type: String,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    samples: Vec<serde_json::Value>,
}

pub fn parse_schema_document(text: &str) -> Result<DatabaseSchema, SchemaError> {
    let doc: DocSchema =
        serde_json::from_str(text).map_err(|e| SchemaError::MalformedSchema(e.to_string()))?;
    let tables = doc
        .tables
        .into_iter()
        .map(|t| {
            let columns = t
                .columns
                .into_iter()
                .map(|c| Column {
                    name: c.name,
                    data_type: c.data_type,
                    description: c.description.filter(|d| !d.trim().is_empty()),
                    sample_values: c
                        .samples
                        .iter()
                        .take(DEFAULT_SAMPLE_CAP)
                        .map(sample_text)
                        .collect(),
                })
                .collect();
            let primary_key = t.primary_key.map(|k| match k {
                DocKey::One(s) => vec![s],
                DocKey::Many(v) => v,
            });
            let foreign_keys = t
                .foreign_keys
                .into_iter()
                .map(|fk| match fk {
                    DocForeignKey::Object {
                        column,
                        foreign_table,
                        foreign_column,
                    } => ForeignKey {
                        column,
                        foreign_table,
                        foreign_column,
                    },
                    DocForeignKey::Triple(column, foreign_table, foreign_column) => ForeignKey {
                        column,
                        foreign_table,
                        foreign_column,
                    },
                })
                .collect();
            Table {
                name: t.name,
                columns,
                primary_key: primary_key.filter(|k| !k.is_empty()),
                foreign_keys,
            }
        })
        .collect();
    DatabaseSchema::new(doc.name, tables)
}

fn sample_text(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Null => "NULL".to_string(),
        other => other.to_string(),
    }
}

/// Reads tables, columns, keys and up to `sample_cap` sample rows from a
/// SQLite file opened read-only.
pub fn introspect_sqlite(path: &Path, sample_cap: usize) -> Result<DatabaseSchema, SchemaError> {
    let conn = Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("database")
        .to_string();

    let table_names: Vec<String> = {
        let mut stmt = conn.prepare(
            "SELECT name FROM sqlite_master WHERE type = 'table' \
             AND name NOT LIKE 'sqlite_%' ORDER BY rowid",
        )?;
        let rows = stmt.query_map([], |r| r.get::<_, String>(0))?;
        rows.collect::<Result<_, _>>()?
    };

    let mut tables = Vec::with_capacity(table_names.len());
    for table in table_names {
        let quoted = quote_ident(&table);
        let mut columns = Vec::new();
        let mut pk: Vec<(i64, String)> = Vec::new();
        {
            let mut stmt = conn.prepare(&format!("PRAGMA table_info({quoted})"))?;
            let mut rows = stmt.query([])?;
            while let Some(row) = rows.next()? {
                let col: String = row.get(1)?;
                let ty: String = row.get::<_, Option<String>>(2)?.unwrap_or_default();
                let pk_pos: i64 = row.get(5)?;
                if pk_pos > 0 {
                    pk.push((pk_pos, col.clone()));
                }
                columns.push(Column::new(col, ty));
            }
        }
        pk.sort();
        let mut foreign_keys = Vec::new();
        {
            let mut stmt = conn.prepare(&format!("PRAGMA foreign_key_list({quoted})"))?;
            let mut rows = stmt.query([])?;
            while let Some(row) = rows.next()? {
                let foreign_table: String = row.get(2)?;
                let column: String = row.get(3)?;
                let foreign_column: Option<String> = row.get(4)?;
                foreign_keys.push(ForeignKey {
                    column,
                    foreign_column: foreign_column.unwrap_or_default(),
                    foreign_table,
                });
            }
        }
        if sample_cap > 0 && !columns.is_empty() {
            let mut stmt = conn.prepare(&format!("SELECT * FROM {quoted} LIMIT {sample_cap}"))?;
            let n = stmt.column_count();
            let mut rows = stmt.query([])?;
            while let Some(row) = rows.next()? {
                for (i, col) in columns.iter_mut().enumerate().take(n) {
                    let v = crate::exec::Value::from(row.get_ref(i)?);
                    col.sample_values.push(v.to_string());
                }
            }
        }
        tables.push(Table {
            name: table,
            columns,
            primary_key: (!pk.is_empty()).then(|| pk.into_iter().map(|(_, c)| c).collect()),
            foreign_keys,
        });
    }
    DatabaseSchema::new(name, tables)
}

pub(crate) fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}
