//! Prompting generative providers for comparisons and explanations.
//!
//! Every provider response goes through a [`ResponseCache`] keyed by
//! `digest(provider_id, model_id, prompt)`, so a pipeline can be replayed
//! offline and each distinct prompt costs at most one provider request.

pub mod cache;
pub mod prompt;
pub mod provider;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use cache::{CacheError, CacheMeta, CachedResponse, ResponseCache};
pub use prompt::{parse_verdict, render_compare_prompt, render_engaging_prompt, Verdict};
pub use provider::{
    prompt_subject, CompletionRequest, CompletionResponse, HttpProvider, Provider, ProviderError, RecordedResponse,
    ReplayProvider, StubProvider,
};

use crate::corpus::Tweet;

pub const DEFAULT_MAX_RESPONSE_TOKENS: u32 = 200;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Endpoint {
    /// In-process deterministic function bound at construction time.
    Stub,
    /// Cache or recorded responses only; never performs a live request.
    Replay,
    Http(String),
}

impl TryFrom<String> for Endpoint {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        match s.as_str() {
            "stub" => Ok(Endpoint::Stub),
            "replay" => Ok(Endpoint::Replay),
            _ if s.starts_with("http://") || s.starts_with("https://") => Ok(Endpoint::Http(s)),
            _ => Err(format!("endpoint must be \"stub\", \"replay\" or an http(s) URL, got `{s}`")),
        }
    }
}

impl From<Endpoint> for String {
    fn from(e: Endpoint) -> String {
        match e {
            Endpoint::Stub => "stub".into(),
            Endpoint::Replay => "replay".into(),
            Endpoint::Http(url) => url,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProviderRef {
    pub provider_id: String,
    pub model_id: String,
    #[serde(default = "default_max_tokens")]
    pub max_response_tokens: u32,
    pub endpoint: Endpoint,
    /// Append the "The text is engaging because" stem to explanation prompts.
    #[serde(default)]
    pub completion_stub: bool,
}

fn default_max_tokens() -> u32 {
    DEFAULT_MAX_RESPONSE_TOKENS
}

impl ProviderRef {
    pub fn stub(provider_id: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            provider_id: provider_id.into(),
            model_id: model_id.into(),
            max_response_tokens: DEFAULT_MAX_RESPONSE_TOKENS,
            endpoint: Endpoint::Stub,
            completion_stub: false,
        }
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.provider_id.trim().is_empty() {
            return Err(GeneratorError::InvalidProvider("provider_id is empty".into()));
        }
        if self.max_response_tokens == 0 {
            return Err(GeneratorError::InvalidProvider("max_response_tokens must be > 0".into()));
        }
        Ok(())
    }

    pub fn prompt_digest(&self, prompt: &str) -> String {
        prompt_digest(&self.provider_id, &self.model_id, prompt)
    }
}

pub fn prompt_digest(provider_id: &str, model_id: &str, prompt: &str) -> String {
    crate::digest::digest_parts([provider_id.as_bytes(), model_id.as_bytes(), prompt.as_bytes()])
}

/// A cached answer to "why is this text engaging".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub tweet_id: String,
    pub text: String,
    pub provider: ProviderRef,
    pub prompt_digest: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, thiserror::Error)]
pub enum GeneratorError {
    #[error("empty text")]
    EmptyText,
    #[error("invalid provider: {0}")]
    InvalidProvider(String),
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("provider refused: {0}")]
    ProviderRefusal(String),
    #[error("provider returned an empty response")]
    EmptyResponse,
    #[error(transparent)]
    Cache(#[from] CacheError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay: Duration::from_millis(250) }
    }
}

impl RetryPolicy {
    pub fn immediate() -> Self {
        Self { attempts: 3, base_delay: Duration::ZERO }
    }
}

/// A provider bound to its reference, cache and retry policy.
#[derive(Clone)]
pub struct Generator {
    provider_ref: ProviderRef,
    provider: Arc<dyn Provider>,
    cache: Arc<ResponseCache>,
    retry: RetryPolicy,
    requests: Arc<AtomicUsize>,
}

impl std::fmt::Debug for Generator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Generator")
            .field("provider_ref", &self.provider_ref)
            .field("requests", &self.requests.load(Ordering::Relaxed))
            .finish()
    }
}

impl Generator {
    pub fn new(provider_ref: ProviderRef, provider: Arc<dyn Provider>, cache: Arc<ResponseCache>) -> Result<Self, GeneratorError> {
        provider_ref.validate()?;
        Ok(Self { provider_ref, provider, cache, retry: RetryPolicy::default(), requests: Arc::new(AtomicUsize::new(0)) })
    }

    /// Builds the backend implied by the reference's endpoint. `Stub`
    /// endpoints need an explicit provider and are rejected here.
    pub fn from_ref(provider_ref: ProviderRef, cache: Arc<ResponseCache>) -> Result<Self, GeneratorError> {
        let provider: Arc<dyn Provider> = match &provider_ref.endpoint {
            Endpoint::Http(url) => Arc::new(HttpProvider::new(url.clone())),
            Endpoint::Replay => Arc::new(ReplayProvider::default()),
            Endpoint::Stub => {
                return Err(GeneratorError::InvalidProvider(format!(
                    "provider `{}` has a stub endpoint; bind a stub function explicitly",
                    provider_ref.provider_id
                )))
            }
        };
        Self::new(provider_ref, provider, cache)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn provider_ref(&self) -> &ProviderRef {
        &self.provider_ref
    }

    pub fn cache(&self) -> &Arc<ResponseCache> {
        &self.cache
    }

    /// Live provider requests issued so far (cache hits excluded, retries included once).
    pub fn provider_requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    fn call_with_retry(&self, request: &CompletionRequest) -> Result<String, GeneratorError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let mut attempt = 0;
        loop {
            match self.provider.complete(request) {
                Ok(text) => return Ok(text),
                Err(ProviderError::Transport(msg)) => {
                    attempt += 1;
                    if attempt >= self.retry.attempts {
                        return Err(GeneratorError::ProviderUnavailable(msg));
                    }
                    std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt - 1));
                }
                Err(ProviderError::Unavailable(msg)) => return Err(GeneratorError::ProviderUnavailable(msg)),
                Err(ProviderError::Refusal(msg)) => return Err(GeneratorError::ProviderRefusal(msg)),
            }
        }
    }

    /// Cached completion of `prompt`. Empty responses are errors and are not cached.
    pub fn complete(&self, prompt: &str) -> Result<CachedResponse, GeneratorError> {
        let digest = self.provider_ref.prompt_digest(prompt);
        let (entry, _hit) = self.cache.get_or_fetch(&digest, || {
            let request = CompletionRequest {
                model_id: self.provider_ref.model_id.clone(),
                prompt: prompt.to_string(),
                max_tokens: self.provider_ref.max_response_tokens,
            };
            let text = self.call_with_retry(&request)?;
            if text.trim().is_empty() {
                return Err(GeneratorError::EmptyResponse);
            }
            Ok(CachedResponse {
                meta: CacheMeta {
                    digest: digest.clone(),
                    provider_id: self.provider_ref.provider_id.clone(),
                    model_id: self.provider_ref.model_id.clone(),
                    prompt: prompt.to_string(),
                    created_at: Utc::now(),
                },
                text,
            })
        })?;
        Ok(entry)
    }

    /// Explanation of why `text` is engaging, attributed to `subject_id`.
    pub fn explain_text(&self, subject_id: &str, text: &str) -> Result<Explanation, GeneratorError> {
        let prompt = render_engaging_prompt(text, self.provider_ref.completion_stub)?;
        let entry = self.complete(&prompt)?;
        Ok(Explanation {
            tweet_id: subject_id.to_string(),
            text: entry.text,
            provider: self.provider_ref.clone(),
            prompt_digest: entry.meta.digest,
            created_at: entry.meta.created_at,
        })
    }

    pub fn explain(&self, tweet: &Tweet) -> Result<Explanation, GeneratorError> {
        self.explain_text(&tweet.id, &tweet.text)
    }

    /// Explains each tweet with at most `parallelism` requests in flight.
    /// Results are returned in input order.
    pub fn explain_batch(&self, tweets: &[Tweet], parallelism: usize) -> Vec<Result<Explanation, GeneratorError>> {
        let workers = parallelism.max(1).min(tweets.len().max(1));
        let next = AtomicUsize::new(0);
        let mut slots: Vec<Option<Result<Explanation, GeneratorError>>> = (0..tweets.len()).map(|_| None).collect();
        let results = std::sync::Mutex::new(&mut slots);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= tweets.len() {
                        break;
                    }
                    let r = self.explain(&tweets[i]);
                    results.lock().expect("results lock")[i] = Some(r);
                });
            }
        });
        slots.into_iter().map(|r| r.expect("every slot filled")).collect()
    }

    /// Direct yes/no comparison. A guardrail refusal is recorded as an abstaining verdict.
    pub fn zero_shot_compare(&self, t1: &Tweet, t2: &Tweet) -> Result<Verdict, GeneratorError> {
        let prompt = render_compare_prompt(&t1.text, &t2.text)?;
        match self.complete(&prompt) {
            Ok(entry) => Ok(parse_verdict(&entry.text)),
            Err(GeneratorError::ProviderRefusal(raw)) => Ok(Verdict { t1_wins: None, raw, refused: true }),
            Err(e) => Err(e),
        }
    }
}
