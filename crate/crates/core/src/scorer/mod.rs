//! Pairwise scoring over cross-encoder style inputs.
//!
//! The built-in backend is a logistic classifier over hashed, segment-tagged
//! n-grams ([`PairwiseModel`]); transformer backends plug in through
//! [`RemoteScorer`] and recorded scores replay through [`ReplayScorer`].

pub mod assemble;
pub mod features;
pub mod model;
pub mod remote;

use serde::{Deserialize, Serialize};

pub use assemble::{assemble_input, AssembledInput, AssemblyMode};
pub use features::{featurize, SparseVector};
pub use model::{
    examples_from_pairs, sigmoid, train, train_examples, ModelManifest, PairwiseModel, TrainConfig, TrainLog,
    TrainingExample,
};
pub use remote::{RecordedScore, RemoteScorer, ReplayScorer, ScoreRequest, ScoreResponse};

#[derive(Debug, thiserror::Error)]
pub enum ScorerError {
    #[error("empty text")]
    EmptyText,
    #[error("assembly mode requires explanations for both texts")]
    MissingExplanation,
    #[error("no training pairs")]
    EmptyTrainingSet,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training produced non-finite weights")]
    NonFinite,
    #[error("bad model file: {0}")]
    BadModelFile(String),
    #[error("remote scorer unavailable: {0}")]
    RemoteScorerUnavailable(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Probability that the first text out-reacts the second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredComparison {
    pub p_t1: f64,
    /// `p_t1 > 0.5`; an exact tie goes to the second text.
    pub verdict: bool,
    pub assembled: AssembledInput,
}

impl ScoredComparison {
    pub fn new(p_t1: f64, assembled: AssembledInput) -> Self {
        Self { p_t1, verdict: p_t1 > 0.5, assembled }
    }
}

pub trait PairScorer: Send + Sync {
    fn predict(
        &self,
        t1: &str,
        t2: &str,
        e1: Option<&str>,
        e2: Option<&str>,
        mode: AssemblyMode,
    ) -> Result<ScoredComparison, ScorerError>;
}

impl<S: PairScorer + ?Sized> PairScorer for std::sync::Arc<S> {
    fn predict(
        &self,
        t1: &str,
        t2: &str,
        e1: Option<&str>,
        e2: Option<&str>,
        mode: AssemblyMode,
    ) -> Result<ScoredComparison, ScorerError> {
        (**self).predict(t1, t2, e1, e2, mode)
    }
}

type ScoreFn = dyn Fn(&str, &str) -> f64 + Send + Sync;

/// Test double scoring the two texts with a plain function.
pub struct StubScorer(Box<ScoreFn>);

impl StubScorer {
    pub fn from_fn(f: impl Fn(&str, &str) -> f64 + Send + Sync + 'static) -> Self {
        Self(Box::new(f))
    }

    pub fn constant(p: f64) -> Self {
        Self::from_fn(move |_, _| p)
    }

    /// `sigmoid(len(t1) − len(t2))` in characters: antisymmetric and transitive.
    pub fn longer_wins() -> Self {
        Self::from_fn(|a, b| sigmoid(a.chars().count() as f64 - b.chars().count() as f64))
    }
}

impl PairScorer for StubScorer {
    fn predict(
        &self,
        t1: &str,
        t2: &str,
        e1: Option<&str>,
        e2: Option<&str>,
        mode: AssemblyMode,
    ) -> Result<ScoredComparison, ScorerError> {
        let assembled = assemble_input(t1, t2, e1, e2, mode)?;
        Ok(ScoredComparison::new((self.0)(t1, t2), assembled))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_threshold() {
        let s = StubScorer::constant(0.9).predict("a", "b", None, None, AssemblyMode::PairOnly).unwrap();
        assert!(s.verdict);
        let tie = StubScorer::constant(0.5).predict("a", "b", None, None, AssemblyMode::PairOnly).unwrap();
        assert!(!tie.verdict);
    }

    #[test]
    fn longer_wins_is_antisymmetric() {
        let s = StubScorer::longer_wins();
        let ab = s.predict("long text", "short", None, None, AssemblyMode::PairOnly).unwrap().p_t1;
        let ba = s.predict("short", "long text", None, None, AssemblyMode::PairOnly).unwrap().p_t1;
        assert!(ab > 0.5);
        assert!((ab + ba - 1.0).abs() < 1e-12);
    }
}
