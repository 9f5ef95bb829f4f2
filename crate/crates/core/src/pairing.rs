//! Labeled pair construction under the four retention rules, temporal split
//! and per-topic statistics.
//!
//! A candidate pair is kept only when both tweets were posted on a weekday,
//! their retweet counts differ by at least `margin_fraction` of the smaller
//! count, they are at most `max_gap_days` calendar days apart and within
//! `max_time_of_day_gap_hours` of each other on the (circular) clock, and a
//! topic tagger put both in the same topic with probability at least
//! `topic_prob_threshold`.

use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, NaiveDate, TimeZone, Timelike, Weekday};
use chrono_tz::Tz;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, RecordErrorKind, Tweet, TweetRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairingConfig {
    pub margin_fraction: f64,
    pub max_gap_days: i64,
    pub max_time_of_day_gap_hours: f64,
    pub topic_prob_threshold: f64,
    pub weekdays_only: bool,
    pub order_seed: u64,
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self {
            margin_fraction: 0.10,
            max_gap_days: 10,
            max_time_of_day_gap_hours: 5.0,
            topic_prob_threshold: 0.8,
            weekdays_only: true,
            order_seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PairingError {
    #[error("invalid pairing config: {0}")]
    InvalidConfig(String),
    #[error("tweets without topic annotation: {}", .0.join(", "))]
    MissingAnnotation(Vec<String>),
}

impl PairingConfig {
    pub fn validate(&self) -> Result<(), PairingError> {
        if self.margin_fraction.is_nan() || self.margin_fraction <= 0.0 {
            return Err(PairingError::InvalidConfig("margin_fraction must be > 0".into()));
        }
        if self.max_gap_days <= 0 {
            return Err(PairingError::InvalidConfig("max_gap_days must be > 0".into()));
        }
        if self.max_time_of_day_gap_hours.is_nan() || self.max_time_of_day_gap_hours < 0.0 {
            return Err(PairingError::InvalidConfig("max_time_of_day_gap_hours must be >= 0".into()));
        }
        if !(self.topic_prob_threshold > 0.0 && self.topic_prob_threshold <= 1.0) {
            return Err(PairingError::InvalidConfig("topic_prob_threshold must be in (0, 1]".into()));
        }
        Ok(())
    }
}

pub fn passes_weekday(t: &Tweet, tz: Tz) -> bool {
    !matches!(t.created_at.with_timezone(&tz).weekday(), Weekday::Sat | Weekday::Sun)
}

/// Ties are always rejected. When the smaller count is zero any nonzero difference passes.
pub fn margin_ok(rt1: u64, rt2: u64, margin_fraction: f64) -> bool {
    if rt1 == rt2 {
        return false;
    }
    let (lo, hi) = (rt1.min(rt2), rt1.max(rt2));
    if lo == 0 {
        return true;
    }
    // ratio form: `margin_fraction * lo` can round above an exact threshold
    (hi - lo) as f64 / lo as f64 >= margin_fraction
}

/// `100·|rt1−rt2| / min(rt1, rt2)`, or `None` when the smaller count is zero.
pub fn rel_diff_pct(rt1: u64, rt2: u64) -> Option<f64> {
    let lo = rt1.min(rt2);
    if lo == 0 {
        return None;
    }
    Some(100.0 * rt1.abs_diff(rt2) as f64 / lo as f64)
}

const SECONDS_PER_DAY: i64 = 86_400;

/// Circular distance between two local clock times, in hours.
pub fn time_of_day_gap_hours(a: &DateTime<Tz>, b: &DateTime<Tz>) -> f64 {
    let sa = a.num_seconds_from_midnight() as i64;
    let sb = b.num_seconds_from_midnight() as i64;
    let d = (sa - sb).abs();
    d.min(SECONDS_PER_DAY - d) as f64 / 3600.0
}

/// Calendar-day gap of at most `max_gap_days` and clock-time gap of at most
/// `max_time_of_day_gap_hours`, both in the tweets' reference timezone.
pub fn temporally_compatible(t1: &Tweet, t2: &Tweet, config: &PairingConfig) -> bool {
    let tz = t1.created_at.timezone();
    let a = t1.created_at;
    let b = t2.created_at.with_timezone(&tz);
    let day_gap = (a.date_naive() - b.date_naive()).num_days().abs();
    day_gap <= config.max_gap_days && time_of_day_gap_hours(&a, &b) <= config.max_time_of_day_gap_hours
}

pub fn topically_compatible(t1: &Tweet, t2: &Tweet, threshold: f64) -> Result<bool, PairingError> {
    let missing: Vec<String> = [t1, t2].iter().filter(|t| t.topic.is_none()).map(|t| t.id.clone()).collect();
    match (&t1.topic, &t2.topic) {
        (Some(a), Some(b)) => Ok(a.label == b.label && a.prob >= threshold && b.prob >= threshold),
        _ => Err(PairingError::MissingAnnotation(missing)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    /// Unordered identity: the two tweet ids in lexicographic order joined by `|`.
    pub pair_id: String,
    pub t1: Tweet,
    pub t2: Tweet,
    /// `t1` received more retweets than `t2`.
    pub label: bool,
    pub topic: String,
    /// `None` when one of the counts is zero and the relative difference is unbounded.
    pub rel_diff_pct: Option<f64>,
    pub max_created_at: DateTime<Tz>,
}

pub fn pair_id(a: &str, b: &str) -> String {
    if a <= b {
        format!("{a}|{b}")
    } else {
        format!("{b}|{a}")
    }
}

/// Seeded coin deciding whether the lexicographically larger id is presented
/// first. Depends only on the seed and the pair identity.
pub fn presentation_swapped(seed: u64, pair_id: &str) -> bool {
    let digest = crate::digest::digest_parts([seed.to_le_bytes().as_slice(), pair_id.as_bytes()]);
    let first = u8::from_str_radix(&digest[..2], 16).expect("hex digest");
    first & 1 == 1
}

impl LabeledPair {
    /// Builds a pair from two tweets in the given presentation order.
    pub fn new(t1: Tweet, t2: Tweet, topic: impl Into<String>) -> Self {
        let pair_id = pair_id(&t1.id, &t2.id);
        let label = t1.retweet_count > t2.retweet_count;
        let rel_diff_pct = rel_diff_pct(t1.retweet_count, t2.retweet_count);
        let max_created_at = t1.created_at.max(t2.created_at);
        Self { pair_id, t1, t2, label, topic: topic.into(), rel_diff_pct, max_created_at }
    }

    pub fn to_record(&self) -> PairRecord {
        PairRecord {
            pair_id: self.pair_id.clone(),
            t1: self.t1.to_record(),
            t2: self.t2.to_record(),
            label: self.label,
            topic: self.topic.clone(),
            rel_diff_pct: self.rel_diff_pct,
            max_created_at: self.max_created_at.to_rfc3339(),
        }
    }
}

/// One line of the pairs file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub t1: TweetRecord,
    pub t2: TweetRecord,
    pub label: bool,
    pub topic: String,
    pub rel_diff_pct: Option<f64>,
    pub max_created_at: String,
}

#[derive(Debug, thiserror::Error)]
#[error("pair {pair_id}: {kind}")]
pub struct PairRecordError {
    pub pair_id: String,
    pub kind: RecordErrorKind,
}

impl PairRecord {
    /// Rebuilds the pair in `tz`. Label and derived fields are recomputed from
    /// the tweets and must agree with the stored ones.
    pub fn into_pair(self, tz: Tz) -> Result<LabeledPair, PairRecordError> {
        let err = |kind| PairRecordError { pair_id: self.pair_id.clone(), kind };
        let t1 = self.t1.clone().into_tweet(tz).map_err(err)?;
        let t2 = self.t2.clone().into_tweet(tz).map_err(err)?;
        let pair = LabeledPair::new(t1, t2, self.topic.clone());
        if pair.label != self.label || pair.pair_id != self.pair_id {
            return Err(err(RecordErrorKind::InvalidValue));
        }
        Ok(pair)
    }
}

pub fn read_pairs(path: &std::path::Path, tz: Tz) -> Result<Vec<LabeledPair>, Box<dyn std::error::Error + Send + Sync>> {
    let records: Vec<PairRecord> = crate::jsonl::read_path(path)?;
    Ok(records.into_iter().map(|r| r.into_pair(tz)).collect::<Result<_, _>>()?)
}

pub fn pairs_to_jsonl(pairs: &[LabeledPair]) -> Vec<u8> {
    let records: Vec<PairRecord> = pairs.iter().map(LabeledPair::to_record).collect();
    crate::jsonl::to_bytes(&records).expect("pair records serialize")
}

fn passes_all(a: &Tweet, b: &Tweet, config: &PairingConfig) -> bool {
    margin_ok(a.retweet_count, b.retweet_count, config.margin_fraction)
        && temporally_compatible(a, b, config)
        && topically_compatible(a, b, config.topic_prob_threshold).unwrap_or(false)
}

/// Every unordered pair passing the four rules, once each, sorted by
/// `(max_created_at, pair_id)`.
pub fn build_pairs(corpus: &Corpus, config: &PairingConfig) -> Result<Vec<LabeledPair>, PairingError> {
    config.validate()?;
    let missing: Vec<String> = corpus.tweets().iter().filter(|t| t.topic.is_none()).map(|t| t.id.clone()).collect();
    if !missing.is_empty() {
        return Err(PairingError::MissingAnnotation(missing));
    }

    let tz = corpus.reference_timezone();
    let eligible: Vec<&Tweet> = corpus
        .tweets()
        .iter()
        .filter(|t| !config.weekdays_only || passes_weekday(t, tz))
        .collect();

    // Tweets are sorted by instant, so local dates are non-decreasing and the
    // inner scan can stop at the first tweet beyond the day gap.
    let mut pairs: Vec<LabeledPair> = (0..eligible.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let a = eligible[i];
            let a_date = a.created_at.with_timezone(&tz).date_naive();
            eligible[i + 1..]
                .iter()
                .take_while(move |b| (b.created_at.with_timezone(&tz).date_naive() - a_date).num_days() <= config.max_gap_days)
                .filter(move |b| passes_all(a, b, config))
                .map(move |b| make_pair(a, b, config.order_seed))
        })
        .collect();

    pairs.sort_by(|x, y| x.max_created_at.cmp(&y.max_created_at).then_with(|| x.pair_id.cmp(&y.pair_id)));
    Ok(pairs)
}

fn make_pair(a: &Tweet, b: &Tweet, seed: u64) -> LabeledPair {
    let (lo, hi) = if a.id <= b.id { (a, b) } else { (b, a) };
    let id = pair_id(&lo.id, &hi.id);
    let (t1, t2) = if presentation_swapped(seed, &id) { (hi, lo) } else { (lo, hi) };
    let topic = t1.topic.as_ref().expect("annotated").label.clone();
    LabeledPair::new(t1.clone(), t2.clone(), topic)
}

/// Pairs whose latest tweet precedes local midnight of `split_date` go to
/// training; the rest to validation.
pub fn temporal_split(pairs: &[LabeledPair], split_date: NaiveDate) -> (Vec<LabeledPair>, Vec<LabeledPair>) {
    pairs.iter().cloned().partition(|p| p.max_created_at < split_boundary(split_date, p.max_created_at.timezone()))
}

fn split_boundary(date: NaiveDate, tz: Tz) -> DateTime<Tz> {
    let midnight = date.and_hms_opt(0, 0, 0).expect("midnight");
    tz.from_local_datetime(&midnight)
        .earliest()
        .unwrap_or_else(|| tz.from_utc_datetime(&midnight))
}

/// Default split date: training covers everything through April 2022.
pub fn default_split_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 5, 1).expect("valid date")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub topic: String,
    pub avg_retweets: f64,
    pub pair_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub rows: Vec<StatsRow>,
    pub total_pairs: usize,
    /// Fraction of pairs labeled "t1 wins"; 0 for an empty set.
    pub label_balance: f64,
}

pub fn corpus_stats(pairs: &[LabeledPair]) -> StatsReport {
    let mut acc: BTreeMap<&str, (u64, usize, usize)> = BTreeMap::new();
    for p in pairs {
        let e = acc.entry(p.topic.as_str()).or_default();
        e.0 += p.t1.retweet_count + p.t2.retweet_count;
        e.1 += 2;
        e.2 += 1;
    }
    let mut rows: Vec<StatsRow> = acc
        .into_iter()
        .map(|(topic, (sum, occurrences, count))| StatsRow {
            topic: topic.to_string(),
            avg_retweets: sum as f64 / occurrences as f64,
            pair_count: count,
        })
        .collect();
    rows.sort_by(|a, b| b.pair_count.cmp(&a.pair_count).then_with(|| a.topic.cmp(&b.topic)));
    let positives = pairs.iter().filter(|p| p.label).count();
    StatsReport {
        rows,
        total_pairs: pairs.len(),
        label_balance: if pairs.is_empty() { 0.0 } else { positives as f64 / pairs.len() as f64 },
    }
}

fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

impl StatsReport {
    pub const COLUMNS: [&'static str; 3] = ["Topic", "Avg. RT", "Pairs"];

    /// Plain-text table: Topic, Avg. RT, Pairs, then a Total row and footer notes.
    pub fn render_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.topic.chars().count()).max().unwrap_or(0).max(5);
        let mut out = format!("{:<width$}  {:>9}  {:>7}\n", Self::COLUMNS[0], Self::COLUMNS[1], Self::COLUMNS[2]);
        for r in &self.rows {
            out += &format!("{:<width$}  {:>9.1}  {:>7}\n", r.topic, r.avg_retweets, thousands(r.pair_count));
        }
        out += &format!("{:<width$}  {:>9}  {:>7}\n", "Total", "", thousands(self.total_pairs));
        out += "\nAvg. RT averages retweet counts over every tweet occurrence in the topic's pairs.\n";
        out += &format!("Label balance (t1 wins): {:.3}\n", self.label_balance);
        out
    }
}
