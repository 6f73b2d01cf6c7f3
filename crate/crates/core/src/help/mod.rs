//! AI help: the tutor prompt, usage guardrails and the streamed reply.

mod guardrails;
mod prompt;
mod strip;
mod stream;

pub use guardrails::{check_guardrails, GuardrailDecision, GuardrailState, EXAM_MODE_MESSAGE};
pub use prompt::{
    build_prompt, estimate_tokens, truncate_to_budget, PromptBundle, PromptError, OMITTED_MARKER,
    SOURCE_SHARE_PERCENT, SYSTEM_MESSAGE,
};
pub use stream::{
    request_body, sse_body, stream_completion, CompletionRequest, HelpError, HttpTransport,
    MockReply, MockTransport, RetryPolicy, SseParser, StreamEvent, Transport, TransportError,
    DISCLAIMER,
};
pub use strip::{strip_code_blocks, CodeBlockFilter, CODE_PLACEHOLDER};

use crate::config::ToolConfig;

/// The API key from the environment variable named in the config.
pub fn resolve_api_key(config: &ToolConfig) -> Option<String> {
    std::env::var(&config.api_key_env_var)
        .ok()
        .filter(|k| !k.trim().is_empty())
}

/// The backend selected by `config`: canned replies when `mock_responses` is
/// set, HTTPS otherwise.
pub fn transport_for(config: &ToolConfig) -> Result<Box<dyn Transport>, HelpError> {
    match &config.mock_responses {
        Some(dir) => MockTransport::from_dir(dir)
            .map(|m| Box::new(m) as Box<dyn Transport>)
            .map_err(|e| HelpError::Api(format!("{}: {e}", dir.display()))),
        None => Ok(Box::new(HttpTransport::new()?)),
    }
}
