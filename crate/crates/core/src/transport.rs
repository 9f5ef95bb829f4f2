//! Blocking JSON request/response transport shared by every remote client
//! (topic tagger, generative providers, remote scorer, paraphraser).

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    /// Connection failures, timeouts and 5xx responses. Worth retrying.
    #[error("transport failure: {0}")]
    Unreachable(String),
    /// The remote answered with a non-retryable status.
    #[error("remote returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Decode(String),
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, TransportError::Unreachable(_))
    }
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
}

impl Default for JsonClient {
    fn default() -> Self {
        Self::new(Duration::from_secs(60))
    }
}

impl JsonClient {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self { agent }
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, url: &str, body: &Req) -> Result<Resp, TransportError> {
        match self.agent.post(url).send_json(body) {
            Ok(resp) => resp.into_json::<Resp>().map_err(|e| TransportError::Decode(e.to_string())),
            Err(ureq::Error::Status(status, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                if status >= 500 {
                    Err(TransportError::Unreachable(format!("status {status}: {body}")))
                } else {
                    Err(TransportError::Status { status, body })
                }
            }
            Err(ureq::Error::Transport(t)) => Err(TransportError::Unreachable(t.to_string())),
        }
    }
}
