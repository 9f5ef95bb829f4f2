//! Seeded synthetic fixtures: random corpora for pairing checks and labeled
//! pair sets for scorer checks.

use std::collections::HashSet;

use chrono::Duration;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{local_instant, Corpus, TopicAnnotation, TopicVocabulary, Tweet, US_EASTERN};
use crate::pairing::LabeledPair;
use crate::scorer::TrainingExample;

const WORDS: &[&str] = &[
    "economy", "jobs", "families", "growth", "plan", "health", "care", "vaccine", "school", "students", "teachers",
    "workers", "wages", "infrastructure", "roads", "bridges", "energy", "climate", "small", "business", "owners",
    "prices", "rescue", "relief", "today", "president", "nation", "american", "future", "build", "invest", "record",
    "million", "communities", "support", "access", "safe", "strong", "together", "progress", "rural", "cities",
    "housing", "child", "tax", "credit", "manufacturing", "supply", "chain", "broadband",
];

pub const LEAK_MARKER: &str = "zqxviralhook";

fn words(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| *WORDS.choose(rng).expect("nonempty")).collect::<Vec<_>>().join(" ")
}

/// Random annotated corpus of `n` tweets spread over six weeks of March–April
/// 2021, with retweet counts that include ties and zeros, and topics drawn
/// around the 0.8 confidence threshold.
pub fn random_corpus(n: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topics = ["Business & Entrepreneurs", "Fitness & Health", "Learning & Educational"];
    let start = local_instant(US_EASTERN, 2021, 3, 1, 0, 0);
    let tweets = (0..n)
        .map(|i| {
            let offset = Duration::minutes(rng.gen_range(0..42 * 24 * 60));
            let retweet_count = match rng.gen_range(0..10) {
                0 => 0,
                1 => 100,
                _ => rng.gen_range(1..600),
            };
            let topic = TopicAnnotation::new(*topics.choose(&mut rng).expect("nonempty"), rng.gen_range(70..=100) as f64 / 100.0);
            let len = rng.gen_range(3..12);
            Tweet {
                id: format!("t{i:04}"),
                text: words(&mut rng, len),
                created_at: start + offset,
                retweet_count,
                topic: Some(topic),
            }
        })
        .collect();
    Corpus::from_tweets(tweets, US_EASTERN, TopicVocabulary::default()).expect("unique ids")
}

fn tweet(id: String, text: String, retweets: u64, day: u32) -> Tweet {
    Tweet {
        id,
        text,
        created_at: local_instant(US_EASTERN, 2021, 3, 1 + day % 28, 12, 0),
        retweet_count: retweets,
        topic: Some(TopicAnnotation::new("Business & Entrepreneurs", 0.9)),
    }
}

/// Pairs where the label is exactly "t1 is the longer text": long texts have
/// 12–20 words, short ones 2–5.
pub fn separable_examples(n: usize, seed: u64) -> Vec<TrainingExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let long_len = rng.gen_range(12..=20);
            let short_len = rng.gen_range(2..=5);
            let long = words(&mut rng, long_len);
            let short = words(&mut rng, short_len);
            let label = rng.gen::<bool>();
            let (t1, t2) = if label { (long, short) } else { (short, long) };
            TrainingExample { t1, t2, e1: None, e2: None, label }
        })
        .collect()
}

/// Pairs of unrelated random texts with coin-flip labels. Every tweet appears in
/// exactly one pair. Returns the pairs and the texts of the winning tweets.
pub fn random_label_pairs(n: usize, seed: u64) -> (Vec<LabeledPair>, HashSet<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut winners = HashSet::new();
    let pairs = (0..n)
        .map(|i| {
            let len_a = rng.gen_range(5..=12);
            let len_b = rng.gen_range(5..=12);
            let a_text = format!("{} #{i}a", words(&mut rng, len_a));
            let b_text = format!("{} #{i}b", words(&mut rng, len_b));
            let low = rng.gen_range(10..500);
            let high = low * 2;
            let t1_wins = rng.gen::<bool>();
            let (rt1, rt2) = if t1_wins { (high, low) } else { (low, high) };
            winners.insert(if t1_wins { a_text.clone() } else { b_text.clone() });
            let day = (i % 20) as u32;
            LabeledPair::new(
                tweet(format!("p{i:05}a"), a_text, rt1, day),
                tweet(format!("p{i:05}b"), b_text, rt2, day),
                "Business & Entrepreneurs",
            )
        })
        .collect();
    (pairs, winners)
}

/// Stub explanation: the first three words of the text, plus a marker when
/// the text is one of `winners`.
pub fn leaking_explanation(text: &str, winners: &HashSet<String>) -> String {
    let head: Vec<&str> = text.split_whitespace().take(3).collect();
    if winners.contains(text) {
        format!("mentions {} and has a {LEAK_MARKER}", head.join(" "))
    } else {
        format!("mentions {}", head.join(" "))
    }
}

/// A perfectly balanced pair set: half labeled "t1 wins", half not.
pub fn balanced_pairs(n_per_class: usize) -> Vec<LabeledPair> {
    let topics = ["Business & Entrepreneurs", "Fitness & Health"];
    (0..2 * n_per_class)
        .map(|i| {
            let topic = topics[i % 2];
            let (rt1, rt2) = if i < n_per_class { (200, 100) } else { (100, 200) };
            let annotate = |mut t: Tweet| {
                t.topic = Some(TopicAnnotation::new(topic, 0.9));
                t
            };
            LabeledPair::new(
                annotate(tweet(format!("b{i:04}x"), format!("balanced text {i} x"), rt1, (i % 20) as u32)),
                annotate(tweet(format!("b{i:04}y"), format!("balanced text {i} y"), rt2, (i % 20) as u32)),
                topic,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_seeded() {
        assert_eq!(random_corpus(30, 1), random_corpus(30, 1));
        assert_ne!(random_corpus(30, 1), random_corpus(30, 2));
        assert_eq!(separable_examples(10, 3), separable_examples(10, 3));
    }

    #[test]
    fn separable_labels_follow_length() {
        for ex in separable_examples(50, 0) {
            assert_eq!(ex.label, ex.t1.split_whitespace().count() > ex.t2.split_whitespace().count());
        }
    }

    #[test]
    fn balanced_is_balanced() {
        let pairs = balanced_pairs(10);
        assert_eq!(pairs.iter().filter(|p| p.label).count(), 10);
        assert_eq!(pairs.len(), 20);
    }

    #[test]
    fn random_pairs_have_one_winner_each() {
        let (pairs, winners) = random_label_pairs(40, 9);
        assert_eq!(winners.len(), 40);
        for p in &pairs {
            let winner = if p.label { &p.t1.text } else { &p.t2.text };
            assert!(winners.contains(winner));
        }
    }
}
