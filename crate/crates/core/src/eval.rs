//! Evaluation: accuracy, positive-class F1, topic and bucket breakdowns, and a
//! paired approximate randomization test between two systems.
//!
//! The positive class is "t1 wins". An always-positive predictor on a balanced
//! set therefore scores 50.0% accuracy and 66.7% F1.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pairing::LabeledPair;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("predictions and gold labels differ in length ({preds} vs {gold})")]
    LengthMismatch { preds: usize, gold: usize },
    #[error("nothing to evaluate")]
    EmptySet,
    #[error("prediction references unknown pair `{0}`")]
    UnmatchedPairId(String),
    #[error("no prediction for pair `{0}`")]
    MissingPrediction(String),
    #[error("pair `{0}` predicted more than once")]
    DuplicatePrediction(String),
    #[error("prediction sets do not cover the same pairs")]
    CoverageMismatch,
    #[error("randomization test needs at least {MIN_ITERATIONS} iterations, got {0}")]
    TooFewIterations(usize),
    #[error("invalid bucket boundaries: {0}")]
    InvalidBuckets(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_labels(preds: &[bool], gold: &[bool]) -> Result<Self, EvalError> {
        if preds.len() != gold.len() {
            return Err(EvalError::LengthMismatch { preds: preds.len(), gold: gold.len() });
        }
        if preds.is_empty() {
            return Err(EvalError::EmptySet);
        }
        let mut c = Confusion::default();
        for (&p, &g) in preds.iter().zip(gold) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn n(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.n() as f64
    }

    /// `2·TP / (2·TP + FP + FN)`, or 0 when there are no predicted or actual positives.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

pub fn accuracy(preds: &[bool], gold: &[bool]) -> Result<f64, EvalError> {
    Ok(Confusion::from_labels(preds, gold)?.accuracy())
}

pub fn f1_positive(preds: &[bool], gold: &[bool]) -> Result<f64, EvalError> {
    Ok(Confusion::from_labels(preds, gold)?.f1())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub pair_id: String,
    /// `None` records an abstention (unparseable answer or refusal).
    pub verdict: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_t1: Option<f64>,
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub pair_id: String,
    pub verdict: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_t1: Option<f64>,
    pub system_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub system_id: String,
    pub entries: Vec<PredictionEntry>,
}

impl PredictionSet {
    pub fn new(system_id: impl Into<String>, entries: Vec<PredictionEntry>) -> Self {
        Self { system_id: system_id.into(), entries }
    }

    /// Every pair predicted as `verdict`.
    pub fn constant(system_id: impl Into<String>, pairs: &[LabeledPair], verdict: bool) -> Self {
        let entries = pairs
            .iter()
            .map(|p| PredictionEntry { pair_id: p.pair_id.clone(), verdict: Some(verdict), p_t1: None })
            .collect();
        Self::new(system_id, entries)
    }

    pub fn to_records(&self) -> Vec<PredictionRecord> {
        self.entries
            .iter()
            .map(|e| PredictionRecord { pair_id: e.pair_id.clone(), verdict: e.verdict, p_t1: e.p_t1, system_id: self.system_id.clone() })
            .collect()
    }

    /// Groups records by system id, preserving first-seen order.
    pub fn from_records(records: Vec<PredictionRecord>) -> Vec<PredictionSet> {
        let mut sets: Vec<PredictionSet> = Vec::new();
        for r in records {
            let entry = PredictionEntry { pair_id: r.pair_id, verdict: r.verdict, p_t1: r.p_t1 };
            match sets.iter_mut().find(|s| s.system_id == r.system_id) {
                Some(set) => set.entries.push(entry),
                None => sets.push(PredictionSet::new(r.system_id, vec![entry])),
            }
        }
        sets
    }

    fn index(&self) -> Result<HashMap<&str, &PredictionEntry>, EvalError> {
        let mut map = HashMap::with_capacity(self.entries.len());
        for e in &self.entries {
            if map.insert(e.pair_id.as_str(), e).is_some() {
                return Err(EvalError::DuplicatePrediction(e.pair_id.clone()));
            }
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSpec {
    /// Ascending lower bounds (in percent) of buckets 1..=K; bucket 0 starts at 0.
    pub boundaries: Vec<f64>,
}

impl Default for BucketSpec {
    fn default() -> Self {
        Self { boundaries: vec![10.0, 60.0, 141.3, 311.5] }
    }
}

impl BucketSpec {
    pub fn new(boundaries: Vec<f64>) -> Result<Self, EvalError> {
        if boundaries.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(EvalError::InvalidBuckets("boundaries must be finite and > 0".into()));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::InvalidBuckets("boundaries must be strictly ascending".into()));
        }
        Ok(Self { boundaries })
    }

    pub fn len(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn label(index: usize) -> String {
        format!("Bucket-{index}")
    }

    /// `[lower, upper)` of bucket `index`; `upper` is `None` for the last bucket.
    pub fn bounds(&self, index: usize) -> (f64, Option<f64>) {
        let lower = if index == 0 { 0.0 } else { self.boundaries[index - 1] };
        (lower, self.boundaries.get(index).copied())
    }
}

/// Index of the left-closed, right-open bucket containing `rel_diff_pct`.
pub fn assign_bucket(rel_diff_pct: f64, spec: &BucketSpec) -> usize {
    spec.boundaries.iter().take_while(|&&b| rel_diff_pct >= b).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub n: usize,
    pub accuracy: f64,
    pub f1: f64,
}

impl From<Confusion> for MetricRow {
    fn from(c: Confusion) -> Self {
        Self { n: c.n(), accuracy: c.accuracy(), f1: c.f1() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicRow {
    pub topic: String,
    #[serde(flatten)]
    pub metrics: MetricRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub bucket: String,
    pub lower: f64,
    pub upper: Option<f64>,
    #[serde(flatten)]
    pub metrics: MetricRow,
}

pub const RANDOMIZATION_TEST: &str = "paired approximate randomization (accuracy difference, two-sided, add-one smoothed)";
pub const MIN_ITERATIONS: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub baseline_id: String,
    pub system_id: String,
    pub test_name: String,
    pub metric: String,
    pub iterations: usize,
    pub seed: u64,
    pub observed_diff: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system_id: String,
    pub overall: MetricRow,
    /// Pairs whose prediction abstained; excluded from every metric.
    pub excluded_abstentions: usize,
    pub per_topic: Vec<TopicRow>,
    /// Vocabulary topics with no evaluated instance.
    pub omitted_topics: Vec<String>,
    pub per_bucket: Vec<BucketRow>,
    pub buckets: BucketSpec,
    pub significance: Option<Significance>,
}

pub fn evaluate(preds: &PredictionSet, pairs: &[LabeledPair], buckets: &BucketSpec) -> Result<EvalReport, EvalError> {
    let vocab = crate::corpus::TopicVocabulary::default();
    evaluate_with_topics(preds, pairs, buckets, vocab.labels())
}

pub fn evaluate_with_topics(
    preds: &PredictionSet,
    pairs: &[LabeledPair],
    buckets: &BucketSpec,
    topics: &[String],
) -> Result<EvalReport, EvalError> {
    let index = preds.index()?;
    let known: HashSet<&str> = pairs.iter().map(|p| p.pair_id.as_str()).collect();
    if let Some(e) = preds.entries.iter().find(|e| !known.contains(e.pair_id.as_str())) {
        return Err(EvalError::UnmatchedPairId(e.pair_id.clone()));
    }

    let mut overall = Confusion::default();
    let mut by_topic: BTreeMap<&str, Confusion> = BTreeMap::new();
    let mut by_bucket: BTreeMap<usize, Confusion> = BTreeMap::new();
    let mut excluded = 0;
    for pair in pairs {
        let entry = index.get(pair.pair_id.as_str()).ok_or_else(|| EvalError::MissingPrediction(pair.pair_id.clone()))?;
        let Some(verdict) = entry.verdict else {
            excluded += 1;
            continue;
        };
        let bucket = assign_bucket(pair.rel_diff_pct.unwrap_or(f64::INFINITY), buckets);
        for c in [&mut overall, by_topic.entry(pair.topic.as_str()).or_default(), by_bucket.entry(bucket).or_default()] {
            match (verdict, pair.label) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
    }
    if overall.n() == 0 {
        return Err(EvalError::EmptySet);
    }

    let mut per_topic: Vec<TopicRow> =
        by_topic.iter().map(|(t, c)| TopicRow { topic: t.to_string(), metrics: (*c).into() }).collect();
    per_topic.sort_by(|a, b| b.metrics.n.cmp(&a.metrics.n).then_with(|| a.topic.cmp(&b.topic)));
    let omitted_topics = topics.iter().filter(|t| !by_topic.contains_key(t.as_str())).cloned().collect();
    let per_bucket = by_bucket
        .into_iter()
        .map(|(i, c)| {
            let (lower, upper) = buckets.bounds(i);
            BucketRow { bucket: BucketSpec::label(i), lower, upper, metrics: c.into() }
        })
        .collect();

    Ok(EvalReport {
        system_id: preds.system_id.clone(),
        overall: overall.into(),
        excluded_abstentions: excluded,
        per_topic,
        omitted_topics,
        per_bucket,
        buckets: buckets.clone(),
        significance: None,
    })
}

fn correctness(preds: &PredictionSet, pairs: &[LabeledPair]) -> Result<Vec<bool>, EvalError> {
    let index = preds.index()?;
    pairs
        .iter()
        .map(|p| {
            index
                .get(p.pair_id.as_str())
                .map(|e| e.verdict == Some(p.label))
                .ok_or(EvalError::CoverageMismatch)
        })
        .collect()
}

/// Two-sided paired approximate randomization test on the accuracy difference
/// of `system` against `baseline`. Each iteration swaps the two systems'
/// correctness on every pair with probability ½ and draws its coins from its
/// own ChaCha stream, so iterations run in parallel without changing the result.
pub fn significance(
    baseline: &PredictionSet,
    system: &PredictionSet,
    pairs: &[LabeledPair],
    iterations: usize,
    seed: u64,
) -> Result<Significance, EvalError> {
    if iterations < MIN_ITERATIONS {
        return Err(EvalError::TooFewIterations(iterations));
    }
    let ids: HashSet<&str> = pairs.iter().map(|p| p.pair_id.as_str()).collect();
    for set in [baseline, system] {
        if set.entries.len() != ids.len() || set.entries.iter().any(|e| !ids.contains(e.pair_id.as_str())) {
            return Err(EvalError::CoverageMismatch);
        }
    }
    if pairs.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let a = correctness(baseline, pairs)?;
    let b = correctness(system, pairs)?;

    // Only discordant pairs change the difference when swapped; each one
    // contributes +1 (system right) or −1 (baseline right).
    let discordant: Vec<i64> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(&x, _)| if x { -1 } else { 1 }).collect();
    let observed: i64 = discordant.iter().sum();

    let hits: usize = (0..iterations as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            let d: i64 = discordant.iter().map(|&s| if rng.gen::<bool>() { -s } else { s }).sum();
            usize::from(d.abs() >= observed.abs())
        })
        .sum();

    Ok(Significance {
        baseline_id: baseline.system_id.clone(),
        system_id: system.system_id.clone(),
        test_name: RANDOMIZATION_TEST.to_string(),
        metric: "accuracy".to_string(),
        iterations,
        seed,
        observed_diff: observed as f64 / pairs.len() as f64,
        p_value: (hits + 1) as f64 / (iterations + 1) as f64,
    })
}

pub fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

/// `Model | Accuracy | F1` table over several systems.
pub fn render_systems_table(reports: &[EvalReport]) -> String {
    let width = reports.iter().map(|r| r.system_id.chars().count()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}  {:>8}  {:>8}\n", "Model", "Accuracy", "F1");
    for r in reports {
        out += &format!("{:<width$}  {:>8}  {:>8}\n", r.system_id, pct(r.overall.accuracy), pct(r.overall.f1));
    }
    out
}

impl EvalReport {
    pub fn render_text(&self) -> String {
        let mut out = render_systems_table(std::slice::from_ref(self));
        out += &format!("n = {}", self.overall.n);
        if self.excluded_abstentions > 0 {
            out += &format!(" (excluded abstentions: {})", self.excluded_abstentions);
        }
        out += "\n\nTopic-wise evaluation\n";
        let width = self.per_topic.iter().map(|r| r.topic.chars().count()).max().unwrap_or(0).max(5);
        out += &format!("{:<width$}  {:>5}  {:>8}  {:>8}\n", "Topic", "n", "Accuracy", "F1");
        for r in &self.per_topic {
            out += &format!("{:<width$}  {:>5}  {:>8}  {:>8}\n", r.topic, r.metrics.n, pct(r.metrics.accuracy), pct(r.metrics.f1));
        }
        if !self.omitted_topics.is_empty() {
            out += &format!("* no instances for: {}\n", self.omitted_topics.join(", "));
        }
        out += "\nRetweet-difference buckets\n";
        for r in &self.per_bucket {
            let range = match r.upper {
                Some(u) => format!("{}%<=diff<{}%", r.lower, u),
                None => format!("diff>={}%", r.lower),
            };
            out += &format!("{} ({}): n={} Accuracy {} F1 {}\n", r.bucket, range, r.metrics.n, pct(r.metrics.accuracy), pct(r.metrics.f1));
        }
        if let Some(s) = &self.significance {
            out += &format!(
                "\nSignificance vs {}: p = {:.4} [{}; metric {}; {} iterations; seed {}]\n",
                s.baseline_id, s.p_value, s.test_name, s.metric, s.iterations, s.seed
            );
        }
        out
    }
}
