/// Dialect-specific SQL spellings. Callers that build SQL text go through
/// this so another engine can be added without touching them.
pub trait Dialect: Send + Sync {
    fn name(&self) -> &'static str;

    fn quote_ident(&self, ident: &str) -> String;

    /// Wraps a query so it returns at most `n` rows.
    fn limit(&self, query: &str, n: usize) -> String;

    /// Expression extracting `path` (object keys) from a JSON/variant column.
    fn json_path(&self, column: &str, path: &[&str]) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SqliteDialect;

impl Dialect for SqliteDialect {
    fn name(&self) -> &'static str {
        "sqlite"
    }

    fn quote_ident(&self, ident: &str) -> String {
        format!("\"{}\"", ident.replace('"', "\"\""))
    }

    fn limit(&self, query: &str, n: usize) -> String {
        format!("SELECT * FROM ({}) LIMIT {n}", query.trim().trim_end_matches(';'))
    }

    fn json_path(&self, column: &str, path: &[&str]) -> String {
        let mut p = String::from("$");
        for key in path {
            p.push('.');
            p.push_str(key);
        }
        format!("json_extract({}, '{}')", self.quote_ident(column), p.replace('\'', "''"))
    }
}
