use std::time::Duration;

use serde_json::{json, Value as Json};

use super::{Backend, BackendReply, ChatRequest, GatewayError};

pub const ENV_BASE_URL: &str = "APEX_BASE_URL";
pub const ENV_API_KEY: &str = "APEX_API_KEY";
pub const ENV_MODEL: &str = "APEX_MODEL";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub request_timeout: Duration,
}

impl HttpConfig {
    /// Reads the endpoint from the environment. The base URL and model are
    /// required; the key is optional for local servers.
    pub fn from_env() -> Result<Self, GatewayError> {
        let base_url = std::env::var(ENV_BASE_URL)
            .map_err(|_| GatewayError::BackendUnavailable(format!("{ENV_BASE_URL} is not set")))?;
        let model = std::env::var(ENV_MODEL)
            .map_err(|_| GatewayError::BackendUnavailable(format!("{ENV_MODEL} is not set")))?;
        Ok(Self {
            base_url,
            api_key: std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty()),
            model,
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
            request_timeout: Duration::from_secs(300),
        })
    }
}

/// OpenAI-compatible chat-completions endpoint.
pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    id: String,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.request_timeout))
            .build()
            .into();
        let id = format!("http:{}", config.model);
        Self { config, agent, id }
    }

    pub fn from_env() -> Result<Self, GatewayError> {
        Ok(Self::new(HttpConfig::from_env()?))
    }

    fn endpoint(&self) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }

    fn attempt(&self, body: &Json) -> Result<BackendReply, String> {
        let mut req = self.agent.post(&self.endpoint());
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        let payload: Json = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        parse_completion(&payload)
    }
}

pub(crate) fn parse_completion(payload: &Json) -> Result<BackendReply, String> {
    let choice = payload
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| format!("response has no choices: {payload}"))?;
    let content = choice
        .pointer("/message/content")
        .and_then(Json::as_str)
        .unwrap_or_default()
        .to_string();
    let truncated = choice.get("finish_reason").and_then(Json::as_str) == Some("length");
    let usage = payload.get("usage");
    Ok(BackendReply {
        content,
        input_tokens: usage.and_then(|u| u.get("prompt_tokens")).and_then(Json::as_u64),
        output_tokens: usage
            .and_then(|u| u.get("completion_tokens"))
            .and_then(Json::as_u64),
        truncated,
    })
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<BackendReply, GatewayError> {
        let body = json!({
            "model": self.config.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let mut delay = self.config.initial_backoff;
        let mut last = String::new();
        for attempt in 0..self.config.attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(&body) {
                Ok(reply) => return Ok(reply),
                Err(e) => {
                    log::warn!("chat request {} attempt {} failed: {e}", request.tag, attempt + 1);
                    last = e;
                }
            }
        }
        Err(GatewayError::BackendUnavailable(last))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_openai_shape() {
        let payload = json!({
            "choices": [{"message": {"role": "assistant", "content": "hi"}, "finish_reason": "length"}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 3}
        });
        let r = parse_completion(&payload).unwrap();
        assert_eq!(r.content, "hi");
        assert!(r.truncated);
        assert_eq!(r.input_tokens, Some(12));
        assert!(parse_completion(&json!({})).is_err());
    }

    #[test]
    fn unreachable_endpoint_exhausts_retries() {
        let backend = HttpBackend::new(HttpConfig {
            base_url: "http://127.0.0.1:9".into(),
            api_key: None,
            model: "m".into(),
            attempts: 3,
            initial_backoff: Duration::from_millis(1),
            request_timeout: Duration::from_secs(2),
        });
        let err = backend
            .complete(&ChatRequest::user_prompt("t", "x", 0.0, 10))
            .unwrap_err();
        assert!(matches!(err, GatewayError::BackendUnavailable(_)));
    }
}
