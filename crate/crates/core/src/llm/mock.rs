use serde::{Deserialize, Serialize};

use super::{Backend, BackendReply, ChatRequest, GatewayError};

/// A reusable canned answer: unlike replay entries, rules are never consumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default)]
    pub tag: Option<String>,
    #[serde(default)]
    pub contains: Vec<String>,
    pub response: String,
}

/// Answers with the first matching rule, or the default when none match.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    pub rules: Vec<MockRule>,
    pub default: Option<String>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rule(mut self, tag: Option<&str>, contains: &[&str], response: impl Into<String>) -> Self {
        self.rules.push(MockRule {
            tag: tag.map(str::to_string),
            contains: contains.iter().map(|s| s.to_string()).collect(),
            response: response.into(),
        });
        self
    }

    pub fn fallback(mut self, response: impl Into<String>) -> Self {
        self.default = Some(response.into());
        self
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &ChatRequest) -> Result<BackendReply, GatewayError> {
        let content = request.joined_content();
        let base = request.tag.split('@').next().unwrap_or(&request.tag);
        let hit = self.rules.iter().find(|r| {
            r.tag
                .as_deref()
                .is_none_or(|t| t == request.tag || t == base)
                && r.contains.iter().all(|n| content.contains(n))
        });
        match hit.map(|r| r.response.clone()).or_else(|| self.default.clone()) {
            Some(content) => Ok(BackendReply {
                content,
                ..BackendReply::default()
            }),
            None => Err(GatewayError::ScriptExhausted {
                tag: request.tag.clone(),
            }),
        }
    }
}
