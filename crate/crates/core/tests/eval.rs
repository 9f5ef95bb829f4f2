use cream_core::corpus::{tweet_at, TopicAnnotation, US_EASTERN};
use cream_core::eval::{
    assign_bucket, evaluate, pct, significance, BucketSpec, EvalError, PredictionEntry, PredictionSet, MIN_ITERATIONS,
};
use cream_core::pairing::LabeledPair;
use cream_core::synthetic::balanced_pairs;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn pair(n: usize, topic: &str, rt1: u64, rt2: u64) -> LabeledPair {
    let ann = Some(TopicAnnotation::new(topic, 0.9));
    LabeledPair::new(
        tweet_at(&format!("{n}a"), "x", "2021-03-02T15:00:00Z", rt1, ann.clone(), US_EASTERN),
        tweet_at(&format!("{n}b"), "y", "2021-03-02T16:00:00Z", rt2, ann, US_EASTERN),
        topic,
    )
}

fn preds(id: &str, pairs: &[LabeledPair], verdicts: &[Option<bool>]) -> PredictionSet {
    let entries = pairs
        .iter()
        .zip(verdicts)
        .map(|(p, v)| PredictionEntry { pair_id: p.pair_id.clone(), verdict: *v, p_t1: None })
        .collect();
    PredictionSet::new(id, entries)
}

/// Direct counting oracle over (prediction, gold) lists.
fn oracle(preds: &[bool], gold: &[bool]) -> (f64, f64) {
    let n = preds.len() as f64;
    let correct = preds.iter().zip(gold).filter(|(p, g)| p == g).count() as f64;
    let tp = preds.iter().zip(gold).filter(|(p, g)| **p && **g).count() as f64;
    let predicted = preds.iter().filter(|p| **p).count() as f64;
    let actual = gold.iter().filter(|g| **g).count() as f64;
    let precision = if predicted == 0.0 { 0.0 } else { tp / predicted };
    let recall = if actual == 0.0 { 0.0 } else { tp / actual };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    (correct / n, f1)
}

#[test]
fn constant_true_on_balanced_set_gives_fifty_and_two_thirds() {
    let pairs = balanced_pairs(50);
    let report = evaluate(&PredictionSet::constant("always-t1", &pairs, true), &pairs, &BucketSpec::default()).unwrap();
    assert_eq!(pct(report.overall.accuracy), "50.0%");
    assert_eq!(pct(report.overall.f1), "66.7%");
    assert_eq!(report.overall.accuracy, 0.5);
    assert_eq!(report.overall.f1, 2.0 / 3.0);
}

#[test]
fn hand_computed_confusion_over_two_topics() {
    // gold: T, F, T, F. predictions: T, T, F, F → tp 1, fp 1, fn 1, tn 1
    let pairs = vec![
        pair(1, "Sports", 200, 100),
        pair(2, "Sports", 100, 200),
        pair(3, "Fitness & Health", 300, 100),
        pair(4, "Fitness & Health", 100, 150),
    ];
    let set = preds("sys", &pairs, &[Some(true), Some(true), Some(false), Some(false)]);
    let r = evaluate(&set, &pairs, &BucketSpec::default()).unwrap();
    assert_eq!(r.overall.accuracy, 0.5);
    assert_eq!(r.overall.f1, 0.5);
    let sports = r.per_topic.iter().find(|t| t.topic == "Sports").unwrap();
    assert_eq!((sports.metrics.n, sports.metrics.accuracy, sports.metrics.f1), (2, 0.5, 2.0 / 3.0));
    let fitness = r.per_topic.iter().find(|t| t.topic == "Fitness & Health").unwrap();
    assert_eq!((fitness.metrics.n, fitness.metrics.accuracy, fitness.metrics.f1), (2, 0.5, 0.0));
    assert_eq!(r.omitted_topics, vec!["Business & Entrepreneurs", "Learning & Educational"]);
    // rel diffs: 100%, 100%, 200%, 50% → buckets 2, 2, 3, 1
    let buckets: Vec<(String, usize)> = r.per_bucket.iter().map(|b| (b.bucket.clone(), b.metrics.n)).collect();
    assert_eq!(buckets, vec![("Bucket-1".into(), 1), ("Bucket-2".into(), 2), ("Bucket-3".into(), 1)]);
}

#[test]
fn bucket_anchors() {
    let spec = BucketSpec::default();
    assert_eq!(assign_bucket(9.9, &spec), 0);
    assert_eq!(assign_bucket(10.0, &spec), 1);
    assert_eq!(assign_bucket(141.3, &spec), 3);
    assert_eq!(assign_bucket(311.5, &spec), 4);
    assert_eq!(BucketSpec::label(assign_bucket(311.5, &spec)), "Bucket-4");
}

#[test]
fn abstentions_are_excluded_and_counted() {
    let pairs = balanced_pairs(4);
    let mut verdicts = vec![Some(true); 8];
    verdicts[0] = None;
    verdicts[7] = None;
    let r = evaluate(&preds("sys", &pairs, &verdicts), &pairs, &BucketSpec::default()).unwrap();
    assert_eq!(r.excluded_abstentions, 2);
    assert_eq!(r.overall.n, 6);
    assert_eq!(r.overall.accuracy, 0.5);
}

#[test]
fn coverage_errors() {
    let pairs = balanced_pairs(2);
    let short = preds("sys", &pairs[..3], &[Some(true); 3]);
    assert!(matches!(evaluate(&short, &pairs, &BucketSpec::default()), Err(EvalError::MissingPrediction(_))));
    let mut extra = PredictionSet::constant("sys", &pairs, true);
    extra.entries.push(PredictionEntry { pair_id: "zz|zz".into(), verdict: Some(true), p_t1: None });
    assert!(matches!(evaluate(&extra, &pairs, &BucketSpec::default()), Err(EvalError::UnmatchedPairId(_))));
    let mut dup = PredictionSet::constant("sys", &pairs, true);
    dup.entries.push(dup.entries[0].clone());
    assert!(evaluate(&dup, &pairs, &BucketSpec::default()).is_err());
    assert!(BucketSpec::new(vec![60.0, 10.0]).is_err());
}

fn random_instance(seed: u64) -> (Vec<LabeledPair>, Vec<Option<bool>>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let topics = ["Sports", "Fitness & Health", "Business & Entrepreneurs"];
    let n = rng.gen_range(1..60);
    let pairs: Vec<LabeledPair> = (0..n)
        .map(|i| {
            let lo = rng.gen_range(0..50);
            let hi = lo + rng.gen_range(1..400);
            let (a, b) = if rng.gen() { (lo, hi) } else { (hi, lo) };
            pair(i, topics[rng.gen_range(0..3)], a, b)
        })
        .collect();
    let verdicts = (0..n).map(|_| if rng.gen_ratio(1, 10) { None } else { Some(rng.gen()) }).collect();
    (pairs, verdicts)
}

#[test]
fn metrics_match_counting_oracle_on_random_instances() {
    let spec = BucketSpec::default();
    for seed in 0..1000 {
        let (pairs, verdicts) = random_instance(seed);
        let kept: Vec<(bool, bool)> =
            pairs.iter().zip(&verdicts).filter_map(|(p, v)| v.map(|v| (v, p.label))).collect();
        let result = evaluate(&preds("sys", &pairs, &verdicts), &pairs, &spec);
        if kept.is_empty() {
            assert!(matches!(result, Err(EvalError::EmptySet)));
            continue;
        }
        let r = result.unwrap();
        let (p, g): (Vec<bool>, Vec<bool>) = kept.iter().copied().unzip();
        let (acc, f1) = oracle(&p, &g);
        assert!((r.overall.accuracy - acc).abs() < 1e-12, "seed {seed}");
        assert!((r.overall.f1 - f1).abs() < 1e-12, "seed {seed}");
        assert_eq!(r.per_topic.iter().map(|t| t.metrics.n).sum::<usize>(), kept.len());
        assert_eq!(r.per_bucket.iter().map(|b| b.metrics.n).sum::<usize>(), kept.len());
        assert_eq!(r.excluded_abstentions + kept.len(), pairs.len());
    }
}

/// Independent sampler: every pair (concordant or not) is swapped with its own
/// coin from a different generator family, and the difference is recomputed
/// from full accuracy vectors.
fn reference_p_value(a: &[bool], b: &[bool], iterations: usize, seed: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let diff = |x: &[bool], y: &[bool]| {
        (y.iter().filter(|v| **v).count() as f64 - x.iter().filter(|v| **v).count() as f64) / x.len() as f64
    };
    let observed = diff(a, b).abs();
    let mut hits = 0;
    for _ in 0..iterations {
        let (mut x, mut y) = (a.to_vec(), b.to_vec());
        for i in 0..x.len() {
            if rng.gen::<bool>() {
                std::mem::swap(&mut x[i], &mut y[i]);
            }
        }
        if diff(&x, &y).abs() >= observed - 1e-12 {
            hits += 1;
        }
    }
    (hits + 1) as f64 / (iterations + 1) as f64
}

#[test]
fn significance_sanity() {
    let pairs = balanced_pairs(100);
    let gold: Vec<Option<bool>> = pairs.iter().map(|p| Some(p.label)).collect();
    let perfect = preds("perfect", &pairs, &gold);
    let same = significance(&perfect, &perfect, &pairs, 10_000, 7).unwrap();
    assert_eq!(same.p_value, 1.0);

    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let coin: Vec<Option<bool>> = pairs.iter().map(|_| Some(rng.gen())).collect();
    let random = preds("random", &pairs, &coin);
    let s = significance(&random, &perfect, &pairs, 10_000, 7).unwrap();
    assert!(s.p_value < 0.01, "p = {}", s.p_value);
    assert_eq!(s, significance(&random, &perfect, &pairs, 10_000, 7).unwrap());

    let a: Vec<bool> = coin.iter().zip(&pairs).map(|(v, p)| *v == Some(p.label)).collect();
    let b = vec![true; pairs.len()];
    assert!(reference_p_value(&a, &b, 10_000, 3) < 0.01);
}

#[test]
fn significance_agrees_with_reference_on_close_systems() {
    let pairs = balanced_pairs(30);
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let v1: Vec<Option<bool>> = pairs.iter().map(|_| Some(rng.gen())).collect();
    let v2: Vec<Option<bool>> = pairs.iter().map(|_| Some(rng.gen())).collect();
    let (s1, s2) = (preds("a", &pairs, &v1), preds("b", &pairs, &v2));
    let ours = significance(&s1, &s2, &pairs, 20_000, 1).unwrap().p_value;
    let correct = |v: &[Option<bool>]| -> Vec<bool> { v.iter().zip(&pairs).map(|(v, p)| *v == Some(p.label)).collect() };
    let theirs = reference_p_value(&correct(&v1), &correct(&v2), 20_000, 2);
    assert!((ours - theirs).abs() < 0.03, "ours {ours} reference {theirs}");
}

#[test]
fn significance_rejects_small_iteration_counts_and_mismatches() {
    let pairs = balanced_pairs(5);
    let set = PredictionSet::constant("a", &pairs, true);
    assert!(matches!(significance(&set, &set, &pairs, MIN_ITERATIONS - 1, 0), Err(EvalError::TooFewIterations(_))));
    let short = PredictionSet::constant("b", &pairs[1..], true);
    assert!(matches!(significance(&set, &short, &pairs, 2000, 0), Err(EvalError::CoverageMismatch)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reports_are_permutation_invariant(seed in 0u64..10_000, shift in 0usize..60) {
        let (pairs, verdicts) = random_instance(seed);
        let set = preds("sys", &pairs, &verdicts);
        let mut rotated = set.clone();
        let k = shift % rotated.entries.len();
        rotated.entries.rotate_left(k);
        let mut pairs_rev = pairs.clone();
        pairs_rev.reverse();
        let a = evaluate(&set, &pairs, &BucketSpec::default());
        let b = evaluate(&rotated, &pairs_rev, &BucketSpec::default());
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "one side failed"),
        }
    }

    #[test]
    fn buckets_are_monotone(x in 0.0f64..1000.0, y in 0.0f64..1000.0) {
        let spec = BucketSpec::default();
        if x <= y {
            prop_assert!(assign_bucket(x, &spec) <= assign_bucket(y, &spec));
        }
    }
}
