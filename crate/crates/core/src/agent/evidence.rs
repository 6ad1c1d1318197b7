//! Cutting long external-knowledge documents down to the parts a question
//! may need.

use crate::llm::{ChatRequest, Gateway, GatewayError};
use crate::prompts::{Prompts, Template};

/// Documents estimated below this many tokens pass through unfiltered.
pub const DEFAULT_PREFILTER_THRESHOLD: u64 = 2000;

/// Returns the relevant excerpt of `document`. Empty documents cost no call,
/// short ones pass through, and a truncated extraction falls back to the
/// whole document.
pub fn prefilter_evidence(
    gateway: &Gateway,
    prompts: &Prompts,
    question: &str,
    file_name: &str,
    document: &str,
    threshold: u64,
    max_output_tokens: u64,
) -> Result<String, GatewayError> {
    if document.trim().is_empty() {
        return Ok(String::new());
    }
    if gateway.estimator().estimate(document) < threshold {
        return Ok(document.to_string());
    }
    let prompt = prompts
        .render(
            Template::EvidenceLink,
            &[("query", question), ("file_name", file_name), ("content", document)],
        )
        .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
    let req = ChatRequest::user_prompt(Template::EvidenceLink.name(), prompt, 0.0, max_output_tokens);
    match gateway.complete(&req) {
        Ok(resp) => Ok(resp.content.trim().to_string()),
        Err(GatewayError::OutputTruncated { .. }) => {
            log::warn!("evidence extraction truncated; using the whole document");
            Ok(document.to_string())
        }
        Err(e) => Err(e),
    }
}
