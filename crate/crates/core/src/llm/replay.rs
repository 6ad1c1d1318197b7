use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendReply, ChatRequest, GatewayError};

/// One scripted answer. It matches a request whose tag equals `tag` (or
/// whose tag before an `@` suffix does) and whose message text contains every
/// string in `contains`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub tag: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    pub response: String,
    /// Simulates the backend stopping at the output limit.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

impl ReplayEntry {
    pub fn new(tag: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            contains: Vec::new(),
            response: response.into(),
            truncated: false,
        }
    }

    pub fn containing(mut self, needle: impl Into<String>) -> Self {
        self.contains.push(needle.into());
        self
    }

    fn matches(&self, tag: &str, content: &str) -> bool {
        let base = tag.split('@').next().unwrap_or(tag);
        (self.tag == tag || self.tag == base) && self.contains.iter().all(|n| content.contains(n))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayScript {
    pub entries: Vec<ReplayEntry>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptFile {
    Object { entries: Vec<ReplayEntry> },
    List(Vec<ReplayEntry>),
}

impl ReplayScript {
    pub fn new(entries: Vec<ReplayEntry>) -> Self {
        Self { entries }
    }

    pub fn push(&mut self, entry: ReplayEntry) {
        self.entries.push(entry);
    }

    pub fn extend(&mut self, other: ReplayScript) {
        self.entries.extend(other.entries);
    }

    /// Accepts `{"entries": [...]}` or a bare list of entries.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(match serde_json::from_str::<ScriptFile>(text)? {
            ScriptFile::Object { entries } | ScriptFile::List(entries) => Self { entries },
        })
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| {
            GatewayError::InvalidRequest(format!("replay script {}: {e}", path.display()))
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }
}

struct Cursor {
    consumed: Vec<bool>,
    used: usize,
}

/// Serves scripted responses, each at most once. Matching is serialized so
/// concurrent callers never receive the same entry.
pub struct ReplayBackend {
    script: ReplayScript,
    cursor: Mutex<Cursor>,
}

impl ReplayBackend {
    pub fn new(script: ReplayScript) -> Self {
        let n = script.entries.len();
        Self {
            script,
            cursor: Mutex::new(Cursor {
                consumed: vec![false; n],
                used: 0,
            }),
        }
    }

    /// Number of entries served so far.
    pub fn consumed(&self) -> usize {
        self.cursor.lock().map(|c| c.used).unwrap_or(0)
    }

    pub fn remaining(&self) -> usize {
        self.script.entries.len() - self.consumed()
    }
}

impl Backend for ReplayBackend {
    fn id(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &ChatRequest) -> Result<BackendReply, GatewayError> {
        let content = request.joined_content();
        let mut cursor = self.cursor.lock().unwrap_or_else(|p| p.into_inner());
        let hit = self
            .script
            .entries
            .iter()
            .enumerate()
            .find(|(i, e)| !cursor.consumed[*i] && e.matches(&request.tag, &content))
            .map(|(i, _)| i);
        match hit {
            Some(i) => {
                cursor.consumed[i] = true;
                cursor.used += 1;
                let e = &self.script.entries[i];
                Ok(BackendReply {
                    content: e.response.clone(),
                    input_tokens: None,
                    output_tokens: None,
                    truncated: e.truncated,
                })
            }
            None => Err(GatewayError::ScriptExhausted {
                tag: request.tag.clone(),
            }),
        }
    }
}
