//! Generative provider backends.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::transport::{JsonClient, TransportError};

/// Wire request: `{model_id, prompt, max_tokens}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub prompt: String,
    pub max_tokens: u32,
}

/// Wire response: `{text}`, with an optional refusal flag for guardrail declines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub refused: bool,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ProviderError {
    /// Transient transport failure; retried with backoff.
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("provider refused: {0}")]
    Refusal(String),
}

impl From<TransportError> for ProviderError {
    fn from(e: TransportError) -> Self {
        if e.is_retryable() {
            ProviderError::Transport(e.to_string())
        } else {
            ProviderError::Unavailable(e.to_string())
        }
    }
}

pub trait Provider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError>;
}

type StubFn = dyn Fn(&CompletionRequest) -> Result<String, ProviderError> + Send + Sync;

/// Deterministic in-process provider backed by a function.
#[derive(Clone)]
pub struct StubProvider(Arc<StubFn>);

impl std::fmt::Debug for StubProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("StubProvider")
    }
}

impl StubProvider {
    pub fn from_fn(f: impl Fn(&CompletionRequest) -> Result<String, ProviderError> + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn constant(answer: impl Into<String>) -> Self {
        let answer = answer.into();
        Self::from_fn(move |_| Ok(answer.clone()))
    }

    /// Answers explanation prompts with `mentions <first n words of the text>`.
    pub fn echo_first_words(n: usize) -> Self {
        Self::from_fn(move |req| {
            let text = prompt_subject(&req.prompt).unwrap_or(&req.prompt);
            let words: Vec<&str> = text.split_whitespace().take(n).collect();
            Ok(format!("mentions {}", words.join(" ")))
        })
    }
}

impl Provider for StubProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        (self.0)(request)
    }
}

/// Text after the `Text: ` line of an explanation prompt.
pub fn prompt_subject(prompt: &str) -> Option<&str> {
    let start = prompt.find("\nText: ")? + "\nText: ".len();
    let rest = &prompt[start..];
    Some(match rest.find("\nThe text is engaging because") {
        Some(end) => &rest[..end],
        None => rest,
    })
}

/// Remote provider over the JSON transport.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    pub url: String,
    pub client: JsonClient,
}

impl HttpProvider {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into(), client: JsonClient::default() }
    }
}

impl Provider for HttpProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let resp: CompletionResponse = self.client.post(&self.url, request)?;
        if resp.refused {
            return Err(ProviderError::Refusal(resp.text));
        }
        Ok(resp.text)
    }
}

/// Serves recorded responses keyed by exact prompt; anything else is unavailable.
#[derive(Debug, Clone, Default)]
pub struct ReplayProvider {
    responses: HashMap<String, String>,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct RecordedResponse {
    pub prompt: String,
    pub text: String,
}

impl ReplayProvider {
    pub fn new(recorded: impl IntoIterator<Item = RecordedResponse>) -> Self {
        Self { responses: recorded.into_iter().map(|r| (r.prompt, r.text)).collect() }
    }

    /// Reads a JSON array of `{prompt, text}` objects.
    pub fn from_path(path: &std::path::Path) -> std::io::Result<Self> {
        let raw = std::fs::read(path)?;
        let recorded: Vec<RecordedResponse> =
            serde_json::from_slice(&raw).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self::new(recorded))
    }
}

impl Provider for ReplayProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        self.responses
            .get(&request.prompt)
            .cloned()
            .ok_or_else(|| ProviderError::Unavailable("no recorded response for prompt".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subject_extraction() {
        assert_eq!(prompt_subject("Why is the following text so engaging?\nText: a b c"), Some("a b c"));
        assert_eq!(
            prompt_subject("Why is the following text so engaging?\nText: a b\nThe text is engaging because"),
            Some("a b")
        );
        assert_eq!(prompt_subject("nothing"), None);
    }

    #[test]
    fn echo_stub() {
        let stub = StubProvider::echo_first_words(3);
        let req = CompletionRequest {
            model_id: "m".into(),
            prompt: "Why is the following text so engaging?\nText: Jobs report beats expectations again".into(),
            max_tokens: 200,
        };
        assert_eq!(stub.complete(&req).unwrap(), "mentions Jobs report beats");
    }

    #[test]
    fn refusal_flag_is_optional_on_the_wire() {
        let r: CompletionResponse = serde_json::from_str(r#"{"text":"hi"}"#).unwrap();
        assert!(!r.refused);
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"text":"hi"}"#);
    }
}
