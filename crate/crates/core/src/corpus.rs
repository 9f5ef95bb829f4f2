//! Tweet ingestion, validation and topic annotation.
//!
//! Dumps are line-delimited JSON objects with the keys `id`, `text`, `created_at`
//! (RFC 3339) and `retweet_count`, plus an optional topic given either nested
//! (`"topic": {"label": .., "prob": ..}`) or flat (`"topic.label"`, `"topic.prob"`).
//! Unknown keys are ignored. Timestamps are normalized to the configured
//! reference timezone because the weekday and time-of-day pairing rules are
//! evaluated in local time.

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use chrono::{DateTime, TimeZone};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::transport::{JsonClient, TransportError};

/// Default reference timezone: the account holder's locale.
pub const US_EASTERN: Tz = chrono_tz::America::New_York;

pub const DEFAULT_TOPICS: [&str; 4] = [
    "Business & Entrepreneurs",
    "Fitness & Health",
    "Learning & Educational",
    "Sports",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicAnnotation {
    pub label: String,
    pub prob: f64,
}

impl TopicAnnotation {
    pub fn new(label: impl Into<String>, prob: f64) -> Self {
        Self { label: label.into(), prob }
    }
}

/// Closed set of topic labels a tagger may emit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TopicVocabulary(Vec<String>);

impl Default for TopicVocabulary {
    fn default() -> Self {
        Self(DEFAULT_TOPICS.iter().map(|s| s.to_string()).collect())
    }
}

impl TopicVocabulary {
    pub fn new(labels: impl IntoIterator<Item = impl Into<String>>) -> Self {
        let mut out: Vec<String> = Vec::new();
        for label in labels {
            let label = label.into();
            if !out.contains(&label) {
                out.push(label);
            }
        }
        Self(out)
    }

    /// Default labels plus `extra`.
    pub fn extended(extra: impl IntoIterator<Item = impl Into<String>>) -> Self {
        let mut vocab = Self::default();
        for label in extra {
            let label = label.into();
            if !vocab.0.contains(&label) {
                vocab.0.push(label);
            }
        }
        vocab
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0.iter().any(|l| l == label)
    }

    pub fn labels(&self) -> &[String] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tweet {
    pub id: String,
    pub text: String,
    pub created_at: DateTime<Tz>,
    pub retweet_count: u64,
    pub topic: Option<TopicAnnotation>,
}

/// Serialized form of a [`Tweet`]; also the dump line format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub id: String,
    pub text: String,
    pub created_at: String,
    pub retweet_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<TopicAnnotation>,
}

impl Tweet {
    pub fn to_record(&self) -> TweetRecord {
        TweetRecord {
            id: self.id.clone(),
            text: self.text.clone(),
            created_at: self.created_at.to_rfc3339(),
            retweet_count: self.retweet_count,
            topic: self.topic.clone(),
        }
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self.to_record()).expect("tweet record serializes")
    }
}

impl TweetRecord {
    /// Parses the record back into a tweet in `tz`. Used when reading pair files.
    pub fn into_tweet(self, tz: Tz) -> Result<Tweet, RecordErrorKind> {
        let created_at = parse_timestamp(&self.created_at, tz).ok_or(RecordErrorKind::MalformedTimestamp)?;
        Ok(Tweet {
            id: self.id,
            text: self.text,
            created_at,
            retweet_count: self.retweet_count,
            topic: self.topic,
        })
    }
}

fn parse_timestamp(raw: &str, tz: Tz) -> Option<DateTime<Tz>> {
    DateTime::parse_from_rfc3339(raw.trim()).ok().map(|dt| dt.with_timezone(&tz))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RecordErrorKind {
    MalformedRecord,
    MissingField,
    MalformedTimestamp,
    NegativeCount,
    EmptyText,
    InvalidValue,
    UnknownTopic,
    DuplicateId,
}

impl RecordErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordErrorKind::MalformedRecord => "MalformedRecord",
            RecordErrorKind::MissingField => "MissingField",
            RecordErrorKind::MalformedTimestamp => "MalformedTimestamp",
            RecordErrorKind::NegativeCount => "NegativeCount",
            RecordErrorKind::EmptyText => "EmptyText",
            RecordErrorKind::InvalidValue => "InvalidValue",
            RecordErrorKind::UnknownTopic => "UnknownTopic",
            RecordErrorKind::DuplicateId => "DuplicateId",
        }
    }
}

impl std::fmt::Display for RecordErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A rejected record: which record, which field, and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("record {index}: {kind} in field `{field}`")]
pub struct RecordError {
    pub index: usize,
    pub field: String,
    pub kind: RecordErrorKind,
}

impl RecordError {
    fn new(index: usize, field: &str, kind: RecordErrorKind) -> Self {
        Self { index, field: field.to_string(), kind }
    }
}

#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub reference_timezone: Tz,
    pub vocabulary: TopicVocabulary,
    /// Any rejected record aborts ingestion instead of being reported.
    pub strict: bool,
}

impl IngestConfig {
    pub fn new(reference_timezone: Tz) -> Self {
        Self { reference_timezone, vocabulary: TopicVocabulary::default(), strict: false }
    }
}

/// Validates one raw record. `index` is the record's 0-based position in its source.
pub fn validate_record(raw: &Map<String, Value>, index: usize, config: &IngestConfig) -> Result<Tweet, RecordError> {
    let err = |field: &str, kind| RecordError::new(index, field, kind);

    let id = match raw.get("id") {
        None | Some(Value::Null) => return Err(err("id", RecordErrorKind::MissingField)),
        Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
        Some(Value::Number(n)) if n.is_u64() => n.to_string(),
        Some(_) => return Err(err("id", RecordErrorKind::InvalidValue)),
    };

    let text = match raw.get("text") {
        None | Some(Value::Null) => return Err(err("text", RecordErrorKind::MissingField)),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(err("text", RecordErrorKind::InvalidValue)),
    };
    if text.trim().is_empty() {
        return Err(err("text", RecordErrorKind::EmptyText));
    }

    let created_at = match raw.get("created_at") {
        None | Some(Value::Null) => return Err(err("created_at", RecordErrorKind::MissingField)),
        Some(Value::String(s)) => {
            parse_timestamp(s, config.reference_timezone).ok_or_else(|| err("created_at", RecordErrorKind::MalformedTimestamp))?
        }
        Some(_) => return Err(err("created_at", RecordErrorKind::MalformedTimestamp)),
    };

    let retweet_count = match raw.get("retweet_count") {
        None | Some(Value::Null) => return Err(err("retweet_count", RecordErrorKind::MissingField)),
        Some(Value::Number(n)) => match (n.as_u64(), n.as_i64()) {
            (Some(v), _) => v,
            (None, Some(_)) => return Err(err("retweet_count", RecordErrorKind::NegativeCount)),
            _ => return Err(err("retweet_count", RecordErrorKind::InvalidValue)),
        },
        Some(_) => return Err(err("retweet_count", RecordErrorKind::InvalidValue)),
    };

    let topic = topic_fields(raw)
        .map(|(label, prob)| validate_topic(label, prob, &config.vocabulary).map_err(|(field, kind)| err(field, kind)))
        .transpose()?;

    Ok(Tweet { id, text, created_at, retweet_count, topic })
}

/// Pulls `(label, prob)` from either the nested or the flat topic layout.
fn topic_fields(raw: &Map<String, Value>) -> Option<(Option<&Value>, Option<&Value>)> {
    match raw.get("topic") {
        Some(Value::Object(obj)) => Some((obj.get("label"), obj.get("prob"))),
        Some(Value::Null) | None => {
            let label = raw.get("topic.label");
            let prob = raw.get("topic.prob");
            if label.is_none() && prob.is_none() {
                None
            } else {
                Some((label, prob))
            }
        }
        Some(other) => Some((Some(other), None)),
    }
}

fn validate_topic(
    label: Option<&Value>,
    prob: Option<&Value>,
    vocabulary: &TopicVocabulary,
) -> Result<TopicAnnotation, (&'static str, RecordErrorKind)> {
    let label = match label {
        None | Some(Value::Null) => return Err(("topic.label", RecordErrorKind::MissingField)),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(("topic.label", RecordErrorKind::InvalidValue)),
    };
    let prob = match prob {
        None | Some(Value::Null) => return Err(("topic.prob", RecordErrorKind::MissingField)),
        Some(v) => v.as_f64().ok_or(("topic.prob", RecordErrorKind::InvalidValue))?,
    };
    if !(0.0..=1.0).contains(&prob) {
        return Err(("topic.prob", RecordErrorKind::InvalidValue));
    }
    if !vocabulary.contains(&label) {
        return Err(("topic.label", RecordErrorKind::UnknownTopic));
    }
    Ok(TopicAnnotation { label, prob })
}

/// Immutable, time-ordered collection of validated tweets.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    tweets: Vec<Tweet>,
    reference_timezone: Tz,
    vocabulary: TopicVocabulary,
    provenance: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("duplicate tweet id `{0}`")]
    DuplicateId(String),
}

impl Corpus {
    /// Builds a corpus from already validated tweets. Tweets are re-expressed in
    /// `tz` and stably sorted by creation time.
    pub fn from_tweets(tweets: Vec<Tweet>, tz: Tz, vocabulary: TopicVocabulary) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for t in &tweets {
            if !seen.insert(t.id.as_str()) {
                return Err(CorpusError::DuplicateId(t.id.clone()));
            }
        }
        let mut tweets: Vec<Tweet> = tweets
            .into_iter()
            .map(|mut t| {
                t.created_at = t.created_at.with_timezone(&tz);
                t
            })
            .collect();
        tweets.sort_by_key(|t| t.created_at);
        Ok(Self { tweets, reference_timezone: tz, vocabulary, provenance: Vec::new() })
    }

    pub fn tweets(&self) -> &[Tweet] {
        &self.tweets
    }

    pub fn len(&self) -> usize {
        self.tweets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tweets.is_empty()
    }

    pub fn reference_timezone(&self) -> Tz {
        self.reference_timezone
    }

    pub fn vocabulary(&self) -> &TopicVocabulary {
        &self.vocabulary
    }

    /// Digests of the source files the corpus was read from.
    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    pub fn is_fully_annotated(&self) -> bool {
        self.tweets.iter().all(|t| t.topic.is_some())
    }

    pub fn to_records(&self) -> Vec<TweetRecord> {
        self.tweets.iter().map(Tweet::to_record).collect()
    }
}

/// Counts of accepted and rejected records, by rejection class.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: usize,
    pub rejected_by_class: BTreeMap<String, usize>,
    pub rejections: Vec<RecordError>,
    pub assumptions: Vec<String>,
}

impl IngestReport {
    fn reject(&mut self, error: RecordError) {
        self.rejected += 1;
        *self.rejected_by_class.entry(error.kind.to_string()).or_default() += 1;
        self.rejections.push(error);
    }

    pub fn count(&self, kind: RecordErrorKind) -> usize {
        self.rejected_by_class.get(kind.as_str()).copied().unwrap_or(0)
    }
}

const RETWEET_SNAPSHOT_NOTE: &str =
    "retweet counts are taken as given in the dump; no fixed post-age snapshot is applied";

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("i/o error reading tweet dump: {0}")]
    Io(#[from] std::io::Error),
    #[error("strict ingestion rejected {0}")]
    Rejected(RecordError),
}

/// Reads a line-delimited dump. Blank lines are skipped and do not consume a record index.
pub fn ingest_tweets(mut source: impl BufRead, config: &IngestConfig) -> Result<(Corpus, IngestReport), IngestError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let digest = crate::digest::sha256_hex(&bytes);
    let text = String::from_utf8_lossy(&bytes);

    let mut report = IngestReport::default();
    let mut seen = HashSet::new();
    let mut tweets = Vec::new();

    for (index, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let outcome = match serde_json::from_str::<Value>(line) {
            Ok(Value::Object(map)) => validate_record(&map, index, config),
            _ => Err(RecordError::new(index, "", RecordErrorKind::MalformedRecord)),
        };
        let outcome = outcome.and_then(|tweet| {
            if seen.insert(tweet.id.clone()) {
                Ok(tweet)
            } else {
                Err(RecordError::new(index, "id", RecordErrorKind::DuplicateId))
            }
        });
        match outcome {
            Ok(tweet) => {
                report.accepted += 1;
                tweets.push(tweet);
            }
            Err(e) if config.strict => return Err(IngestError::Rejected(e)),
            Err(e) => report.reject(e),
        }
    }
    if report.accepted > 0 {
        report.assumptions.push(RETWEET_SNAPSHOT_NOTE.to_string());
    }

    tweets.sort_by_key(|t| t.created_at);
    let corpus = Corpus {
        tweets,
        reference_timezone: config.reference_timezone,
        vocabulary: config.vocabulary.clone(),
        provenance: vec![digest],
    };
    Ok((corpus, report))
}

pub fn ingest_path(path: &Path, config: &IngestConfig) -> Result<(Corpus, IngestReport), IngestError> {
    let file = std::fs::File::open(path)?;
    ingest_tweets(std::io::BufReader::new(file), config)
}

#[derive(Debug, thiserror::Error)]
pub enum TaggerError {
    #[error("tagger unreachable: {0}")]
    Unavailable(String),
    #[error("no fixture annotation for text")]
    NoFixture,
}

impl From<TransportError> for TaggerError {
    fn from(e: TransportError) -> Self {
        TaggerError::Unavailable(e.to_string())
    }
}

/// Maps a tweet text to a topic annotation.
pub trait TopicTagger: Send + Sync {
    fn tag(&self, text: &str) -> Result<TopicAnnotation, TaggerError>;
}

/// Assigns the same annotation to every text.
#[derive(Debug, Clone)]
pub struct ConstantTagger(pub TopicAnnotation);

impl TopicTagger for ConstantTagger {
    fn tag(&self, _text: &str) -> Result<TopicAnnotation, TaggerError> {
        Ok(self.0.clone())
    }
}

/// Lookup table keyed by exact text.
#[derive(Debug, Clone, Default)]
pub struct FixtureTagger {
    pub table: std::collections::HashMap<String, TopicAnnotation>,
    pub fallback: Option<TopicAnnotation>,
}

impl TopicTagger for FixtureTagger {
    fn tag(&self, text: &str) -> Result<TopicAnnotation, TaggerError> {
        self.table.get(text).or(self.fallback.as_ref()).cloned().ok_or(TaggerError::NoFixture)
    }
}

#[derive(Debug, Serialize)]
struct TagRequest<'a> {
    text: &'a str,
}

/// Remote tagger speaking `{text}` → `{label, prob}`.
#[derive(Debug, Clone)]
pub struct HttpTagger {
    pub url: String,
    pub client: JsonClient,
}

impl HttpTagger {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into(), client: JsonClient::default() }
    }
}

impl TopicTagger for HttpTagger {
    fn tag(&self, text: &str) -> Result<TopicAnnotation, TaggerError> {
        Ok(self.client.post(&self.url, &TagRequest { text })?)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AnnotateError {
    #[error("topic tagger unavailable ({pending} tweets left unannotated): {reason}")]
    TaggerUnavailable { pending: usize, reason: String },
    #[error("tagger returned label `{label}` outside the topic vocabulary (tweet {tweet_id})")]
    UnknownTopic { tweet_id: String, label: String },
    #[error("tagger returned probability {prob} outside [0, 1] (tweet {tweet_id})")]
    InvalidProbability { tweet_id: String, prob: f64 },
}

/// Annotates every tweet lacking a topic. Already annotated tweets are left as they are.
pub fn annotate_topics(corpus: &Corpus, tagger: &dyn TopicTagger) -> Result<Corpus, AnnotateError> {
    let mut out = corpus.clone();
    let mut pending = out.tweets.iter().filter(|t| t.topic.is_none()).count();
    for tweet in out.tweets.iter_mut().filter(|t| t.topic.is_none()) {
        let annotation = tagger
            .tag(&tweet.text)
            .map_err(|e| AnnotateError::TaggerUnavailable { pending, reason: e.to_string() })?;
        if !(0.0..=1.0).contains(&annotation.prob) {
            return Err(AnnotateError::InvalidProbability { tweet_id: tweet.id.clone(), prob: annotation.prob });
        }
        if !corpus.vocabulary.contains(&annotation.label) {
            return Err(AnnotateError::UnknownTopic { tweet_id: tweet.id.clone(), label: annotation.label });
        }
        tweet.topic = Some(annotation);
        pending -= 1;
    }
    Ok(out)
}

/// Convenience for tests and fixtures: a tweet at an RFC 3339 instant.
pub fn tweet_at(id: &str, text: &str, rfc3339: &str, retweets: u64, topic: Option<TopicAnnotation>, tz: Tz) -> Tweet {
    let created_at = parse_timestamp(rfc3339, tz).unwrap_or_else(|| panic!("bad timestamp {rfc3339}"));
    Tweet { id: id.to_string(), text: text.to_string(), created_at, retweet_count: retweets, topic }
}

/// Local wall-clock instant in `tz`. Panics on nonexistent local times.
pub fn local_instant(tz: Tz, y: i32, mo: u32, d: u32, h: u32, mi: u32) -> DateTime<Tz> {
    tz.with_ymd_and_hms(y, mo, d, h, mi, 0).single().expect("unambiguous local time")
}
