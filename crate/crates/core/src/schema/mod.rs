//! Database schema model: tables, columns, column references and subsets.

mod batch;
mod load;
mod render;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{
    merge_identical_tables, partition_batches, partition_sized, MergedEntry, SchemaBatch,
    DEFAULT_MAX_BATCH_TOKENS, DEFAULT_MIN_BATCH_TOKENS,
};
pub use load::{load_schema, load_schema_document, parse_schema_document, SchemaSource};
pub use render::{render_schema, render_subset, render_table, RenderStyle};

/// Default number of sample values kept per column.
pub const DEFAULT_SAMPLE_CAP: usize = 3;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("malformed schema: {0}")]
    MalformedSchema(String),
    #[error("duplicate name: {0}")]
    DuplicateName(String),
    #[error("unresolved column reference: {0}")]
    UnresolvedRef(ColumnRef),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("database error: {0}")]
    Database(#[from] rusqlite::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type", default)]
    pub data_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(rename = "samples", default, skip_serializing_if = "Vec::is_empty")]
    pub sample_values: Vec<String>,
}

impl Column {
    pub fn new(name: impl Into<String>, data_type: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            data_type: data_type.into(),
            description: None,
            sample_values: Vec::new(),
        }
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = Some(description.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub column: String,
    pub foreign_table: String,
    pub foreign_column: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary_key: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub foreign_keys: Vec<ForeignKey>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: Vec<Column>) -> Self {
        Self {
            name: name.into(),
            columns,
            primary_key: None,
            foreign_keys: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        let wanted = normalize_ident(name);
        self.columns.iter().find(|c| normalize_ident(&c.name) == wanted)
    }

    /// References to every column of this table, in declaration order.
    pub fn refs(&self) -> impl Iterator<Item = ColumnRef> + '_ {
        self.columns.iter().map(|c| ColumnRef::new(&self.name, &c.name))
    }

    /// A copy of this table keeping only the columns accepted by `keep`.
    /// Keys that mention dropped columns are dropped with them.
    pub fn restricted(&self, mut keep: impl FnMut(&Column) -> bool) -> Table {
        let columns: Vec<Column> = self.columns.iter().filter(|c| keep(c)).cloned().collect();
        let kept: HashSet<String> = columns.iter().map(|c| normalize_ident(&c.name)).collect();
        let primary_key = self.primary_key.as_ref().and_then(|pk| {
            let pk: Vec<String> = pk
                .iter()
                .filter(|c| kept.contains(&normalize_ident(c)))
                .cloned()
                .collect();
            (!pk.is_empty()).then_some(pk)
        });
        let foreign_keys = self
            .foreign_keys
            .iter()
            .filter(|fk| kept.contains(&normalize_ident(&fk.column)))
            .cloned()
            .collect();
        Table {
            name: self.name.clone(),
            columns,
            primary_key,
            foreign_keys,
        }
    }

    fn validate(&self) -> Result<(), SchemaError> {
        if self.name.trim().is_empty() {
            return Err(SchemaError::MalformedSchema("table with empty name".into()));
        }
        let mut seen = HashSet::new();
        for c in &self.columns {
            if c.name.trim().is_empty() {
                return Err(SchemaError::MalformedSchema(format!(
                    "table {} has a column with an empty name",
                    self.name
                )));
            }
            if !seen.insert(normalize_ident(&c.name)) {
                return Err(SchemaError::DuplicateName(format!("{}.{}", self.name, c.name)));
            }
        }
        let key_columns = self
            .primary_key
            .iter()
            .flatten()
            .chain(self.foreign_keys.iter().map(|fk| &fk.column));
        for k in key_columns {
            if !seen.contains(&normalize_ident(k)) {
                return Err(SchemaError::MalformedSchema(format!(
                    "key column {}.{} is not a column of the table",
                    self.name, k
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseSchema {
    pub name: String,
    pub tables: Vec<Table>,
}

impl DatabaseSchema {
    /// Builds a schema and checks its invariants.
    pub fn new(name: impl Into<String>, tables: Vec<Table>) -> Result<Self, SchemaError> {
        let schema = Self {
            name: name.into(),
            tables,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        let mut seen = HashSet::new();
        for t in &self.tables {
            t.validate()?;
            if !seen.insert(normalize_ident(&t.name)) {
                return Err(SchemaError::DuplicateName(t.name.clone()));
            }
        }
        if self.column_count() == 0 {
            return Err(SchemaError::MalformedSchema("schema has no columns".into()));
        }
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        let wanted = normalize_ident(name);
        self.tables.iter().find(|t| normalize_ident(&t.name) == wanted)
    }

    pub fn resolve(&self, r: &ColumnRef) -> Option<(&Table, &Column)> {
        let table = self.table(&r.table)?;
        let column = table.column(&r.column)?;
        Some((table, column))
    }

    pub fn column_count(&self) -> usize {
        self.tables.iter().map(|t| t.columns.len()).sum()
    }

    /// Every column reference in schema order.
    pub fn all_refs(&self) -> Vec<ColumnRef> {
        self.tables.iter().flat_map(|t| t.refs()).collect()
    }

    /// The schema restricted to the columns of `subset`. Tables with no
    /// surviving column are omitted; order follows the schema.
    pub fn restrict(&self, subset: &SchemaSubset) -> Result<DatabaseSchema, SchemaError> {
        subset.validate(self)?;
        let tables = self
            .tables
            .iter()
            .map(|t| t.restricted(|c| subset.contains(&ColumnRef::new(&t.name, &c.name))))
            .filter(|t| !t.columns.is_empty())
            .collect();
        Ok(DatabaseSchema {
            name: self.name.clone(),
            tables,
        })
    }
}

/// Normalized identifier: surrounding whitespace and quotes stripped,
/// lowercased.
pub fn normalize_ident(raw: &str) -> String {
    let mut s = raw.trim();
    loop {
        let stripped = strip_quotes(s);
        if stripped.len() == s.len() {
            break;
        }
        s = stripped.trim();
    }
    s.to_lowercase()
}

fn strip_quotes(s: &str) -> &str {
    let pairs = [('"', '"'), ('`', '`'), ('[', ']'), ('\'', '\'')];
    for (open, close) in pairs {
        if s.len() >= 2 && s.starts_with(open) && s.ends_with(close) {
            return &s[open.len_utf8()..s.len() - close.len_utf8()];
        }
    }
    s
}

/// Identity of a column across the whole system. Stored normalized, so
/// equality, ordering and hashing are case-insensitive and quote-insensitive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "RawColumnRef")]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

#[derive(Deserialize)]
struct RawColumnRef {
    table: String,
    column: String,
}

impl From<RawColumnRef> for ColumnRef {
    fn from(raw: RawColumnRef) -> Self {
        ColumnRef::new(raw.table, raw.column)
    }
}

impl ColumnRef {
    pub fn new(table: impl AsRef<str>, column: impl AsRef<str>) -> Self {
        Self {
            table: normalize_ident(table.as_ref()),
            column: normalize_ident(column.as_ref()),
        }
    }

    /// Parses `table.column`. The split happens at the last dot outside
    /// quotes.
    pub fn parse(s: &str) -> Option<Self> {
        let mut in_quote: Option<char> = None;
        let mut split = None;
        for (i, ch) in s.char_indices() {
            match (in_quote, ch) {
                (Some(q), c) if c == q || (q == '[' && c == ']') => in_quote = None,
                (None, '"' | '`' | '[') => in_quote = Some(ch),
                (None, '.') => split = Some(i),
                _ => {}
            }
        }
        let i = split?;
        let (t, c) = (&s[..i], &s[i + 1..]);
        if normalize_ident(t).is_empty() || normalize_ident(c).is_empty() {
            return None;
        }
        Some(Self::new(t, c))
    }

    pub fn normalized(&self) -> Self {
        Self::new(&self.table, &self.column)
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(default)]
    pub reason: String,
    #[serde(default)]
    pub observations: String,
}

/// A set of columns drawn from one schema, with optional per-column notes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemaSubset {
    refs: BTreeSet<ColumnRef>,
    #[serde(default, with = "annotation_list")]
    annotations: BTreeMap<ColumnRef, Annotation>,
}

/// JSON maps need string keys, so annotations travel as a list.
mod annotation_list {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::{Annotation, ColumnRef};

    #[derive(Serialize, Deserialize)]
    struct Entry {
        column: ColumnRef,
        #[serde(flatten)]
        annotation: Annotation,
    }

    pub fn serialize<S: Serializer>(map: &BTreeMap<ColumnRef, Annotation>, s: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<Entry> = map
            .iter()
            .map(|(c, a)| Entry { column: c.clone(), annotation: a.clone() })
            .collect();
        entries.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<ColumnRef, Annotation>, D::Error> {
        let entries = Vec::<Entry>::deserialize(d)?;
        Ok(entries.into_iter().map(|e| (e.column, e.annotation)).collect())
    }
}

impl SchemaSubset {
    pub fn new(refs: impl IntoIterator<Item = ColumnRef>) -> Self {
        Self {
            refs: refs.into_iter().map(|r| r.normalized()).collect(),
            annotations: BTreeMap::new(),
        }
    }

    /// Every column of `schema`.
    pub fn full(schema: &DatabaseSchema) -> Self {
        Self::new(schema.all_refs())
    }

    pub fn refs(&self) -> &BTreeSet<ColumnRef> {
        &self.refs
    }

    pub fn annotations(&self) -> &BTreeMap<ColumnRef, Annotation> {
        &self.annotations
    }

    pub fn annotation(&self, r: &ColumnRef) -> Option<&Annotation> {
        self.annotations.get(r)
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn contains(&self, r: &ColumnRef) -> bool {
        self.refs.contains(r)
    }

    pub fn insert(&mut self, r: ColumnRef) -> bool {
        self.refs.insert(r.normalized())
    }

    pub fn remove(&mut self, r: &ColumnRef) -> bool {
        self.annotations.remove(r);
        self.refs.remove(r)
    }

    /// Attaches a note to a member column. Notes for non-members are ignored.
    pub fn annotate(&mut self, r: &ColumnRef, annotation: Annotation) {
        if self.refs.contains(r) {
            self.annotations.insert(r.clone(), annotation);
        }
    }

    pub fn union(&self, other: &SchemaSubset) -> SchemaSubset {
        let mut out = self.clone();
        for r in &other.refs {
            out.refs.insert(r.clone());
        }
        for (r, a) in &other.annotations {
            out.annotations.entry(r.clone()).or_insert_with(|| a.clone());
        }
        out
    }

    /// Table names (normalized) that have at least one member column.
    pub fn table_names(&self) -> BTreeSet<String> {
        self.refs.iter().map(|r| r.table.clone()).collect()
    }

    pub fn validate(&self, schema: &DatabaseSchema) -> Result<(), SchemaError> {
        for r in &self.refs {
            if schema.resolve(r).is_none() {
                return Err(SchemaError::UnresolvedRef(r.clone()));
            }
        }
        Ok(())
    }
}

impl FromIterator<ColumnRef> for SchemaSubset {
    fn from_iter<I: IntoIterator<Item = ColumnRef>>(iter: I) -> Self {
        Self::new(iter)
    }
}
