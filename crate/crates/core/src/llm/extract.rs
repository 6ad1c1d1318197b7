//! Pulling structured payloads out of free-form model output.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::exec::split::split_statements;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("parse failure: {0}")]
    ParseFailure(String),
}

fn fail(msg: impl Into<String>) -> ExtractError {
    ExtractError::ParseFailure(msg.into())
}

static FENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)```[ \t]*([A-Za-z0-9_+-]*)(.*?)```").expect("fence regex"));

static ACTION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\[\s*(EXPLORE|REFINE|SQL|CONFIRM)\s*\]").expect("action regex")
});

/// Fenced blocks as (language, body) in order of appearance.
pub fn fenced_blocks(content: &str) -> Vec<(String, String)> {
    FENCE
        .captures_iter(content)
        .map(|c| (c[1].to_ascii_lowercase(), c[2].to_string()))
        .collect()
}

/// Byte ranges of balanced `{...}` spans that start at each top-level brace.
fn balanced_objects(text: &str) -> Vec<&str> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    while let Some(off) = text[start..].find('{') {
        let open = start + off;
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        let mut end = None;
        for (i, &c) in b.iter().enumerate().skip(open) {
            if in_str {
                if escaped {
                    escaped = false;
                } else if c == b'\\' {
                    escaped = true;
                } else if c == b'"' {
                    in_str = false;
                }
                continue;
            }
            match c {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        match end {
            Some(e) => {
                out.push(&text[open..=e]);
                start = e + 1;
            }
            None => start = open + 1,
        }
    }
    out
}

fn first_object(text: &str) -> Option<Json> {
    let trimmed = text.trim();
    if let Ok(v @ Json::Object(_)) = serde_json::from_str::<Json>(trimmed) {
        return Some(v);
    }
    balanced_objects(text)
        .into_iter()
        .find_map(|s| match serde_json::from_str::<Json>(s) {
            Ok(v @ Json::Object(_)) => Some(v),
            _ => None,
        })
}

/// The first well-formed JSON object, looking inside fenced blocks before
/// falling back to bare braces anywhere in the text.
pub fn extract_json_object(content: &str) -> Result<Json, ExtractError> {
    for (_, body) in fenced_blocks(content) {
        if let Some(v) = first_object(&body) {
            return Ok(v);
        }
    }
    first_object(content).ok_or_else(|| fail("no JSON object found"))
}

/// Like `extract_json_object`, deserialized into `T`.
pub fn extract_json<T: DeserializeOwned>(content: &str) -> Result<T, ExtractError> {
    let v = extract_json_object(content)?;
    serde_json::from_value(v).map_err(|e| fail(format!("unexpected JSON shape: {e}")))
}

/// Statements from fenced `sql` blocks, in order. Unlabelled fences are used
/// only when no block is labelled `sql`.
pub fn extract_sql_blocks(content: &str) -> Result<Vec<String>, ExtractError> {
    let blocks = fenced_blocks(content);
    let labelled: Vec<&String> = blocks
        .iter()
        .filter(|(lang, _)| lang == "sql" || lang == "sqlite")
        .map(|(_, body)| body)
        .collect();
    let chosen: Vec<&String> = if labelled.is_empty() {
        blocks
            .iter()
            .filter(|(lang, _)| lang.is_empty())
            .map(|(_, body)| body)
            .collect()
    } else {
        labelled
    };
    let statements: Vec<String> = chosen.into_iter().flat_map(|b| split_statements(b)).collect();
    if statements.is_empty() {
        Err(fail("no fenced SQL found"))
    } else {
        Ok(statements)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ActionTag {
    Explore,
    Refine,
    Sql,
    Confirm,
}

impl ActionTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionTag::Explore => "EXPLORE",
            ActionTag::Refine => "REFINE",
            ActionTag::Sql => "SQL",
            ActionTag::Confirm => "CONFIRM",
        }
    }
}

impl fmt::Display for ActionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The first bracketed action tag and the text after it.
pub fn extract_action(content: &str) -> Result<(ActionTag, String), ExtractError> {
    let m = ACTION
        .captures(content)
        .ok_or_else(|| fail("no action tag found"))?;
    let tag = match m[1].to_ascii_uppercase().as_str() {
        "EXPLORE" => ActionTag::Explore,
        "REFINE" => ActionTag::Refine,
        "SQL" => ActionTag::Sql,
        _ => ActionTag::Confirm,
    };
    let end = m.get(0).map(|g| g.end()).unwrap_or(0);
    Ok((tag, content[end..].trim().to_string()))
}
