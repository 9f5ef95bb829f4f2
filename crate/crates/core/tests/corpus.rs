use cream_core::corpus::{ingest_tweets, validate_record, IngestConfig, TopicAnnotation, Tweet, US_EASTERN};
use proptest::prelude::*;

fn tweet_strategy() -> impl Strategy<Value = Tweet> {
    (
        "[a-z0-9]{1,12}",
        "[A-Za-z .,!?#@]{0,40}[A-Za-z]",
        0i64..4_000_000_000,
        0u64..10_000_000,
        proptest::option::of((0usize..4, 0u32..=100)),
    )
        .prop_map(|(id, text, secs, rt, topic)| Tweet {
            id,
            text,
            created_at: chrono::DateTime::from_timestamp(secs, 0).unwrap().with_timezone(&US_EASTERN),
            retweet_count: rt,
            topic: topic.map(|(i, p)| TopicAnnotation::new(cream_core::corpus::DEFAULT_TOPICS[i], p as f64 / 100.0)),
        })
}

proptest! {
    #[test]
    fn record_round_trip(t in tweet_strategy()) {
        let value = t.to_value();
        let back = validate_record(value.as_object().unwrap(), 0, &IngestConfig::new(US_EASTERN)).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn ingest_is_deterministic(tweets in proptest::collection::vec(tweet_strategy(), 0..30)) {
        let mut dump = String::new();
        for t in &tweets {
            dump.push_str(&serde_json::to_string(&t.to_record()).unwrap());
            dump.push('\n');
        }
        let config = IngestConfig::new(US_EASTERN);
        let (c1, r1) = ingest_tweets(dump.as_bytes(), &config).unwrap();
        let (c2, r2) = ingest_tweets(dump.as_bytes(), &config).unwrap();
        prop_assert_eq!(&c1, &c2);
        prop_assert_eq!(&r1, &r2);
        prop_assert_eq!(r1.accepted + r1.rejected, tweets.len());
        prop_assert!(c1.tweets().windows(2).all(|w| w[0].created_at <= w[1].created_at));
    }
}

#[test]
fn report_identifies_offending_records() {
    let dump = r#"{"id":"1","text":"Hello","created_at":"2021-03-01T14:00:00Z","retweet_count":5}
{"id":"2","text":"   ","created_at":"2021-03-01T14:00:00Z","retweet_count":0}
{"id":"3","text":"x","created_at":"not-a-date","retweet_count":1}
"#;
    let (corpus, report) = ingest_tweets(dump.as_bytes(), &IngestConfig::new(US_EASTERN)).unwrap();
    assert_eq!(corpus.len(), 1);
    assert_eq!(report.rejected, 2);
    let summary: Vec<(usize, &str, String)> =
        report.rejections.iter().map(|e| (e.index, e.field.as_str(), e.kind.to_string())).collect();
    assert_eq!(
        summary,
        vec![(1, "text", "EmptyText".to_string()), (2, "created_at", "MalformedTimestamp".to_string())]
    );
    assert_eq!(corpus.provenance().len(), 1);
    assert!(!report.assumptions.is_empty());
}
