//! Paraphrase generation and pairwise selection of the best candidate.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::generator::{Generator, GeneratorError};
use crate::scorer::{AssemblyMode, PairScorer, ScoredComparison, ScorerError};
use crate::transport::JsonClient;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParaphraseConfig {
    pub num_return_sequences: usize,
    pub num_beams: usize,
    pub max_length: usize,
    pub temperature: f64,
    pub num_beam_groups: usize,
    pub repetition_penalty: f64,
    pub diversity_penalty: f64,
    pub no_repeat_ngram_size: usize,
}

impl Default for ParaphraseConfig {
    fn default() -> Self {
        Self {
            num_return_sequences: 5,
            num_beams: 5,
            max_length: 128,
            temperature: 0.7,
            num_beam_groups: 5,
            repetition_penalty: 10.0,
            diversity_penalty: 3.0,
            no_repeat_ngram_size: 2,
        }
    }
}

impl ParaphraseConfig {
    pub fn validate(&self) -> Result<(), TournamentError> {
        if self.num_return_sequences == 0 {
            return Err(TournamentError::InvalidConfig("num_return_sequences must be >= 1".into()));
        }
        if self.repetition_penalty < 0.0 || self.diversity_penalty < 0.0 {
            return Err(TournamentError::InvalidConfig("penalties must be >= 0".into()));
        }
        Ok(())
    }
}

/// Wire request: the draft plus every generation parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseRequest {
    pub text: String,
    #[serde(flatten)]
    pub config: ParaphraseConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseResponse {
    pub paraphrases: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum TournamentError {
    #[error("draft is empty")]
    EmptyDraft,
    #[error("no candidates")]
    EmptyCandidateList,
    #[error("invalid paraphrase config: {0}")]
    InvalidConfig(String),
    #[error("paraphraser unavailable: {0}")]
    ParaphraserUnavailable(String),
    #[error("explanation failed for candidate {index}: {source}")]
    Explanation {
        index: usize,
        #[source]
        source: GeneratorError,
    },
    #[error("scorer failed after {} comparisons: {source}", partial.len())]
    Scorer {
        #[source]
        source: ScorerError,
        partial: Vec<Comparison>,
    },
}

pub trait ParaphraserClient: Send + Sync {
    fn paraphrase(&self, request: &ParaphraseRequest) -> Result<Vec<String>, TournamentError>;
}

#[derive(Debug, Clone)]
pub struct HttpParaphraser {
    pub url: String,
    pub client: JsonClient,
}

impl HttpParaphraser {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into(), client: JsonClient::default() }
    }
}

impl ParaphraserClient for HttpParaphraser {
    fn paraphrase(&self, request: &ParaphraseRequest) -> Result<Vec<String>, TournamentError> {
        let resp: ParaphraseResponse = self
            .client
            .post(&self.url, request)
            .map_err(|e| TournamentError::ParaphraserUnavailable(e.to_string()))?;
        Ok(resp.paraphrases)
    }
}

/// Returns a fixed list for every draft.
#[derive(Debug, Clone, Default)]
pub struct StubParaphraser(pub Vec<String>);

impl ParaphraserClient for StubParaphraser {
    fn paraphrase(&self, _request: &ParaphraseRequest) -> Result<Vec<String>, TournamentError> {
        Ok(self.0.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedParaphrases {
    pub text: String,
    pub paraphrases: Vec<String>,
}

/// Recorded paraphrases keyed by exact draft text.
#[derive(Debug, Clone, Default)]
pub struct ReplayParaphraser {
    recorded: HashMap<String, Vec<String>>,
}

impl ReplayParaphraser {
    pub fn new(recorded: impl IntoIterator<Item = RecordedParaphrases>) -> Self {
        Self { recorded: recorded.into_iter().map(|r| (r.text, r.paraphrases)).collect() }
    }

    /// Reads a JSON array of `{text, paraphrases}` objects.
    pub fn from_path(path: &std::path::Path) -> std::io::Result<Self> {
        let raw = std::fs::read(path)?;
        let recorded: Vec<RecordedParaphrases> =
            serde_json::from_slice(&raw).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self::new(recorded))
    }
}

impl ParaphraserClient for ReplayParaphraser {
    fn paraphrase(&self, request: &ParaphraseRequest) -> Result<Vec<String>, TournamentError> {
        self.recorded
            .get(&request.text)
            .cloned()
            .ok_or_else(|| TournamentError::ParaphraserUnavailable("no recorded paraphrases for draft".into()))
    }
}

/// `[draft]` followed by up to `num_return_sequences` distinct paraphrases.
/// Blank paraphrases, repeats and copies of the draft are dropped.
pub fn generate_candidates(
    draft: &str,
    paraphraser: &dyn ParaphraserClient,
    config: &ParaphraseConfig,
) -> Result<Vec<String>, TournamentError> {
    if draft.trim().is_empty() {
        return Err(TournamentError::EmptyDraft);
    }
    config.validate()?;
    let request = ParaphraseRequest { text: draft.to_string(), config: config.clone() };
    let mut candidates = vec![draft.to_string()];
    for p in paraphraser.paraphrase(&request)? {
        let p = p.trim();
        if p.is_empty() || candidates.iter().any(|c| c == p) {
            continue;
        }
        if candidates.len() > config.num_return_sequences {
            break;
        }
        candidates.push(p.to_string());
    }
    Ok(candidates)
}

/// Source of explanations for free-standing texts such as paraphrase candidates.
pub trait ExplanationSource: Sync {
    fn explain(&self, text: &str) -> Result<String, GeneratorError>;
}

impl ExplanationSource for Generator {
    fn explain(&self, text: &str) -> Result<String, GeneratorError> {
        let id = crate::digest::sha256_hex(text.as_bytes());
        Ok(self.explain_text(&id, text)?.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Incumbent against each challenger in order; N − 1 comparisons.
    Champion,
    /// Every unordered pair once; most wins, earliest index on ties.
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Index of the text in first position.
    pub first: usize,
    pub second: usize,
    pub scored: ScoredComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TournamentResult {
    pub winner: String,
    pub winner_index: usize,
    pub candidates: Vec<String>,
    pub comparisons: Vec<Comparison>,
    /// Successive champions, starting with the original at index 0.
    pub champion_path: Vec<usize>,
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub explanations: Vec<String>,
}

fn fetch_explanations(candidates: &[String], source: &dyn ExplanationSource) -> Result<Vec<String>, TournamentError> {
    let results: Vec<Result<String, GeneratorError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = candidates.iter().map(|c| scope.spawn(move || source.explain(c))).collect();
        handles.into_iter().map(|h| h.join().expect("explanation worker panicked")).collect()
    });
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| r.map_err(|source| TournamentError::Explanation { index, source }))
        .collect()
}

fn compare(
    candidates: &[String],
    explanations: &[String],
    scorer: &dyn PairScorer,
    mode: AssemblyMode,
    first: usize,
    second: usize,
) -> Result<ScoredComparison, ScorerError> {
    let e = |i: usize| explanations.get(i).map(String::as_str);
    scorer.predict(&candidates[first], &candidates[second], e(first), e(second), mode)
}

/// Sequential champion tournament. The challenger takes over only when the
/// incumbent's probability is strictly below one half.
pub fn select_best(
    candidates: &[String],
    scorer: &dyn PairScorer,
    explanations: Option<&dyn ExplanationSource>,
    mode: AssemblyMode,
) -> Result<TournamentResult, TournamentError> {
    select_with(candidates, scorer, explanations, mode, Strategy::Champion)
}

pub fn select_with(
    candidates: &[String],
    scorer: &dyn PairScorer,
    explanations: Option<&dyn ExplanationSource>,
    mode: AssemblyMode,
    strategy: Strategy,
) -> Result<TournamentResult, TournamentError> {
    if candidates.is_empty() {
        return Err(TournamentError::EmptyCandidateList);
    }
    let explanations = match explanations {
        Some(source) if mode.needs_explanations() && candidates.len() > 1 => fetch_explanations(candidates, source)?,
        _ => Vec::new(),
    };
    let mut comparisons = Vec::new();
    let (winner_index, champion_path) = match strategy {
        Strategy::Champion => {
            let mut champion = 0;
            let mut path = vec![0];
            for challenger in 1..candidates.len() {
                let scored = match compare(candidates, &explanations, scorer, mode, champion, challenger) {
                    Ok(s) => s,
                    Err(source) => return Err(TournamentError::Scorer { source, partial: comparisons }),
                };
                let dethroned = scored.p_t1 < 0.5;
                comparisons.push(Comparison { first: champion, second: challenger, scored });
                if dethroned {
                    champion = challenger;
                    path.push(challenger);
                }
            }
            (champion, path)
        }
        Strategy::RoundRobin => {
            let mut wins = vec![0usize; candidates.len()];
            for i in 0..candidates.len() {
                for j in i + 1..candidates.len() {
                    let scored = match compare(candidates, &explanations, scorer, mode, i, j) {
                        Ok(s) => s,
                        Err(source) => return Err(TournamentError::Scorer { source, partial: comparisons }),
                    };
                    if scored.p_t1 > 0.5 {
                        wins[i] += 1;
                    } else if scored.p_t1 < 0.5 {
                        wins[j] += 1;
                    }
                    comparisons.push(Comparison { first: i, second: j, scored });
                }
            }
            let best = (0..candidates.len()).max_by(|&a, &b| wins[a].cmp(&wins[b]).then(b.cmp(&a))).expect("nonempty");
            let path = if best == 0 { vec![0] } else { vec![0, best] };
            (best, path)
        }
    };
    Ok(TournamentResult {
        winner: candidates[winner_index].clone(),
        winner_index,
        candidates: candidates.to_vec(),
        comparisons,
        champion_path,
        strategy,
        explanations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSensitivity {
    pub forward_winner: String,
    pub reversed_winner: String,
    pub consistent: bool,
}

/// Re-runs the champion tournament over the reversed list to expose scorers
/// whose preferences are not transitive.
pub fn order_sensitivity(
    candidates: &[String],
    scorer: &dyn PairScorer,
    explanations: Option<&dyn ExplanationSource>,
    mode: AssemblyMode,
) -> Result<OrderSensitivity, TournamentError> {
    let forward = select_best(candidates, scorer, explanations, mode)?;
    let reversed: Vec<String> = candidates.iter().rev().cloned().collect();
    let backward = select_best(&reversed, scorer, explanations, mode)?;
    Ok(OrderSensitivity {
        consistent: forward.winner == backward.winner,
        forward_winner: forward.winner,
        reversed_winner: backward.winner,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::StubScorer;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn candidates_put_draft_first() {
        let p = StubParaphraser(strings(&["v1", "v2", "v3", "v4", "v5"]));
        let c = generate_candidates("draft", &p, &ParaphraseConfig::default()).unwrap();
        assert_eq!(c, strings(&["draft", "v1", "v2", "v3", "v4", "v5"]));
    }

    #[test]
    fn duplicates_of_draft_are_dropped() {
        let p = StubParaphraser(vec!["draft".to_string(); 5]);
        assert_eq!(generate_candidates("draft", &p, &ParaphraseConfig::default()).unwrap(), strings(&["draft"]));
    }

    #[test]
    fn candidate_count_is_capped() {
        let p = StubParaphraser(strings(&["a", "b", "c", "d"]));
        let cfg = ParaphraseConfig { num_return_sequences: 2, ..ParaphraseConfig::default() };
        assert_eq!(generate_candidates("draft", &p, &cfg).unwrap(), strings(&["draft", "a", "b"]));
    }

    #[test]
    fn empty_draft() {
        let p = StubParaphraser::default();
        assert!(matches!(generate_candidates("  ", &p, &ParaphraseConfig::default()), Err(TournamentError::EmptyDraft)));
    }

    #[test]
    fn request_carries_every_config_field() {
        let req = ParaphraseRequest { text: "t".into(), config: ParaphraseConfig::default() };
        let v = serde_json::to_value(&req).unwrap();
        for key in [
            "text",
            "num_return_sequences",
            "num_beams",
            "max_length",
            "temperature",
            "num_beam_groups",
            "repetition_penalty",
            "diversity_penalty",
            "no_repeat_ngram_size",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["num_beams"], 5);
        assert_eq!(v["max_length"], 128);
        assert_eq!(v["repetition_penalty"], 10.0);
    }

    #[test]
    fn single_candidate() {
        let r = select_best(&strings(&["only"]), &StubScorer::constant(0.1), None, AssemblyMode::PairOnly).unwrap();
        assert_eq!(r.winner, "only");
        assert!(r.comparisons.is_empty());
        assert_eq!(r.champion_path, vec![0]);
    }

    #[test]
    fn empty_candidates() {
        assert!(matches!(
            select_best(&[], &StubScorer::constant(0.5), None, AssemblyMode::PairOnly),
            Err(TournamentError::EmptyCandidateList)
        ));
    }

    #[test]
    fn longest_wins_and_ties_keep_incumbent() {
        let c = strings(&["mid text", "a", "the longest text", "short"]);
        let r = select_best(&c, &StubScorer::longer_wins(), None, AssemblyMode::PairOnly).unwrap();
        assert_eq!(r.winner, "the longest text");
        assert_eq!(r.comparisons.len(), 3);
        assert_eq!(r.champion_path, vec![0, 2]);

        let r = select_best(&strings(&["x", "y", "z"]), &StubScorer::constant(0.5), None, AssemblyMode::PairOnly).unwrap();
        assert_eq!(r.winner_index, 0);
    }

    #[test]
    fn scorer_failures_carry_partial_comparisons() {
        struct FailSecond(AtomicUsize);
        impl PairScorer for FailSecond {
            fn predict(
                &self,
                t1: &str,
                t2: &str,
                e1: Option<&str>,
                e2: Option<&str>,
                mode: AssemblyMode,
            ) -> Result<ScoredComparison, ScorerError> {
                if self.0.fetch_add(1, Ordering::SeqCst) == 1 {
                    return Err(ScorerError::RemoteScorerUnavailable("down".into()));
                }
                StubScorer::constant(0.7).predict(t1, t2, e1, e2, mode)
            }
        }
        let c = strings(&["a", "b", "c", "d"]);
        match select_best(&c, &FailSecond(AtomicUsize::new(0)), None, AssemblyMode::PairOnly) {
            Err(TournamentError::Scorer { partial, .. }) => assert_eq!(partial.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn round_robin_counts_every_pair() {
        let c = strings(&["bb", "a", "dddd", "ccc"]);
        let r = select_with(&c, &StubScorer::longer_wins(), None, AssemblyMode::PairOnly, Strategy::RoundRobin).unwrap();
        assert_eq!(r.comparisons.len(), 6);
        assert_eq!(r.winner, "dddd");
    }

    #[test]
    fn order_sensitivity_flags_cycles() {
        // rock-paper-scissors: a beats b, b beats c, c beats a
        let beats = |x: &str, y: &str| matches!((x, y), ("a", "b") | ("b", "c") | ("c", "a"));
        let scorer = StubScorer::from_fn(move |x, y| if beats(x, y) { 0.9 } else { 0.1 });
        let s = order_sensitivity(&strings(&["a", "b", "c"]), &scorer, None, AssemblyMode::PairOnly).unwrap();
        assert!(!s.consistent);
        let s = order_sensitivity(&strings(&["a", "bb", "ccc"]), &StubScorer::longer_wins(), None, AssemblyMode::PairOnly).unwrap();
        assert!(s.consistent);
    }

    #[test]
    fn explanations_are_fetched_once_per_candidate() {
        struct Counting(AtomicUsize);
        impl ExplanationSource for Counting {
            fn explain(&self, text: &str) -> Result<String, GeneratorError> {
                self.0.fetch_add(1, Ordering::SeqCst);
                Ok(format!("why {text}"))
            }
        }
        let source = Counting(AtomicUsize::new(0));
        let c = strings(&["a", "bb", "ccc"]);
        let r = select_best(&c, &StubScorer::longer_wins(), Some(&source), AssemblyMode::PairPlusExplanations).unwrap();
        assert_eq!(source.0.load(Ordering::SeqCst), 3);
        assert_eq!(r.explanations, strings(&["why a", "why bb", "why ccc"]));
        assert!(r.comparisons[0].scored.assembled.text.contains("[E1] why a"));
    }
}
