//! Remote and replayed scorers.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::assemble::{assemble_input, AssemblyMode};
use super::{PairScorer, ScoredComparison, ScorerError};
use crate::transport::JsonClient;

/// Wire request: the assembled text plus its four segments and the mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub assembled_text: String,
    pub mode: AssemblyMode,
    pub t1: String,
    pub t2: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e1: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e2: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub p_t1: f64,
}

#[derive(Debug, Clone)]
pub struct RemoteScorer {
    pub url: String,
    pub client: JsonClient,
}

impl RemoteScorer {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into(), client: JsonClient::default() }
    }
}

impl PairScorer for RemoteScorer {
    fn predict(
        &self,
        t1: &str,
        t2: &str,
        e1: Option<&str>,
        e2: Option<&str>,
        mode: AssemblyMode,
    ) -> Result<ScoredComparison, ScorerError> {
        let assembled = assemble_input(t1, t2, e1, e2, mode)?;
        let request = ScoreRequest {
            assembled_text: assembled.text.clone(),
            mode,
            t1: t1.into(),
            t2: t2.into(),
            e1: e1.map(Into::into),
            e2: e2.map(Into::into),
        };
        let resp: ScoreResponse = self
            .client
            .post(&self.url, &request)
            .map_err(|e| ScorerError::RemoteScorerUnavailable(e.to_string()))?;
        if !(0.0..=1.0).contains(&resp.p_t1) {
            return Err(ScorerError::RemoteScorerUnavailable(format!("p_t1 {} outside [0, 1]", resp.p_t1)));
        }
        Ok(ScoredComparison::new(resp.p_t1, assembled))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedScore {
    pub t1: String,
    pub t2: String,
    pub p_t1: f64,
}

/// Recorded scores keyed by the ordered text pair. A pair recorded only in the
/// opposite order is answered with `1 − p`.
#[derive(Debug, Clone, Default)]
pub struct ReplayScorer {
    scores: HashMap<(String, String), f64>,
}

impl ReplayScorer {
    pub fn new(recorded: impl IntoIterator<Item = RecordedScore>) -> Self {
        Self { scores: recorded.into_iter().map(|r| ((r.t1, r.t2), r.p_t1)).collect() }
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, ScorerError> {
        let raw = std::fs::read(path)?;
        let recorded: Vec<RecordedScore> =
            serde_json::from_slice(&raw).map_err(|e| ScorerError::BadModelFile(format!("score fixture: {e}")))?;
        Ok(Self::new(recorded))
    }

    fn lookup(&self, t1: &str, t2: &str) -> Option<f64> {
        self.scores
            .get(&(t1.to_string(), t2.to_string()))
            .copied()
            .or_else(|| self.scores.get(&(t2.to_string(), t1.to_string())).map(|p| 1.0 - p))
    }
}

impl PairScorer for ReplayScorer {
    fn predict(
        &self,
        t1: &str,
        t2: &str,
        e1: Option<&str>,
        e2: Option<&str>,
        mode: AssemblyMode,
    ) -> Result<ScoredComparison, ScorerError> {
        let assembled = assemble_input(t1, t2, e1, e2, mode)?;
        let p = self
            .lookup(t1, t2)
            .ok_or_else(|| ScorerError::RemoteScorerUnavailable("no recorded score for this pair".into()))?;
        Ok(ScoredComparison::new(p, assembled))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_reverses_recorded_pairs() {
        let r = ReplayScorer::new([RecordedScore { t1: "a".into(), t2: "b".into(), p_t1: 0.8 }]);
        let m = AssemblyMode::PairOnly;
        assert_eq!(r.predict("a", "b", None, None, m).unwrap().p_t1, 0.8);
        assert!((r.predict("b", "a", None, None, m).unwrap().p_t1 - 0.2).abs() < 1e-12);
        assert!(matches!(r.predict("a", "c", None, None, m), Err(ScorerError::RemoteScorerUnavailable(_))));
    }

    #[test]
    fn unreachable_remote() {
        let r = RemoteScorer { url: "http://127.0.0.1:9/score".into(), client: JsonClient::new(std::time::Duration::from_millis(500)) };
        assert!(matches!(
            r.predict("a", "b", None, None, AssemblyMode::PairOnly),
            Err(ScorerError::RemoteScorerUnavailable(_))
        ));
    }
}
