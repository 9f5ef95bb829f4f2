use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use cream_core::scorer::{sigmoid, AssemblyMode, StubScorer};
use cream_core::tournament::{
    generate_candidates, order_sensitivity, select_best, select_with, ParaphraseConfig, Strategy, StubParaphraser,
    TournamentError,
};

/// Exhaustive round-robin: the candidate beating every other under `beats`.
fn round_robin_max(candidates: &[String], beats: impl Fn(&str, &str) -> bool) -> usize {
    let wins: Vec<usize> = candidates
        .iter()
        .map(|a| candidates.iter().filter(|b| a != *b && beats(a, b)).count())
        .collect();
    let max = *wins.iter().max().unwrap();
    wins.iter().position(|&w| w == max).unwrap()
}

fn permutations(items: &[String]) -> Vec<Vec<String>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}

#[test]
fn champion_matches_round_robin_for_every_permutation() {
    let pool: Vec<String> = ["a", "bb", "ccc", "dddd", "eeeee", "ffffff"].iter().map(|s| s.to_string()).collect();
    let pairs_seen = Arc::new(Mutex::new(Vec::<(String, String)>::new()));
    let seen = pairs_seen.clone();
    let scorer = StubScorer::from_fn(move |a, b| {
        seen.lock().unwrap().push((a.to_string(), b.to_string()));
        sigmoid(a.len() as f64 - b.len() as f64)
    });
    let mut checked = 0;
    for n in 1..=pool.len() {
        for perm in permutations(&pool[..n]) {
            pairs_seen.lock().unwrap().clear();
            let result = select_best(&perm, &scorer, None, AssemblyMode::PairOnly).unwrap();
            let expected = round_robin_max(&perm, |a, b| a.len() > b.len());
            assert_eq!(result.winner, perm[expected], "{perm:?}");
            assert_eq!(result.comparisons.len(), n - 1);
            assert!(pairs_seen.lock().unwrap().iter().all(|(a, b)| a != b));
            checked += 1;
        }
    }
    assert_eq!(checked, 1 + 2 + 6 + 24 + 120 + 720);
}

#[test]
fn round_robin_strategy_agrees_on_transitive_scorers() {
    let cands: Vec<String> = ["xx", "x", "xxxx", "xxx"].iter().map(|s| s.to_string()).collect();
    let scorer = StubScorer::longer_wins();
    let rr = select_with(&cands, &scorer, None, AssemblyMode::PairOnly, Strategy::RoundRobin).unwrap();
    let ch = select_best(&cands, &scorer, None, AssemblyMode::PairOnly).unwrap();
    assert_eq!(rr.winner, "xxxx");
    assert_eq!(rr.winner, ch.winner);
    assert_eq!(rr.comparisons.len(), 6);
    assert_eq!(ch.champion_path, vec![0, 2]);
}

#[test]
fn ties_keep_the_incumbent() {
    let cands: Vec<String> = vec!["first".into(), "second".into(), "third".into()];
    let result = select_best(&cands, &StubScorer::constant(0.5), None, AssemblyMode::PairOnly).unwrap();
    assert_eq!(result.winner_index, 0);
    assert_eq!(result.champion_path, vec![0]);
}

#[test]
fn cyclic_scorers_are_order_sensitive() {
    // rock beats scissors beats paper beats rock
    let beats = |a: &str, b: &str| matches!((a, b), ("rock", "scissors") | ("scissors", "paper") | ("paper", "rock"));
    let scorer = StubScorer::from_fn(move |a, b| if beats(a, b) { 0.9 } else { 0.1 });
    let cands: Vec<String> = vec!["rock".into(), "paper".into(), "scissors".into()];
    let report = order_sensitivity(&cands, &scorer, None, AssemblyMode::PairOnly).unwrap();
    assert!(!report.consistent);
    let transitive = order_sensitivity(&cands, &StubScorer::longer_wins(), None, AssemblyMode::PairOnly).unwrap();
    assert!(transitive.consistent);
}

#[test]
fn candidates_put_the_draft_first_and_dedup() {
    let paraphraser = StubParaphraser(vec!["b".into(), " a ".into(), "c".into(), "b".into(), "".into()]);
    let cands = generate_candidates("a", &paraphraser, &ParaphraseConfig::default()).unwrap();
    assert_eq!(cands, vec!["a", "b", "c"]);
    let none = generate_candidates("only", &StubParaphraser(vec![]), &ParaphraseConfig::default()).unwrap();
    assert_eq!(none, vec!["only"]);
    let r = select_best(&none, &StubScorer::constant(0.1), None, AssemblyMode::PairOnly).unwrap();
    assert_eq!(r.winner, "only");
    assert!(r.comparisons.is_empty());
    assert!(matches!(
        generate_candidates("  ", &paraphraser, &ParaphraseConfig::default()),
        Err(TournamentError::EmptyDraft)
    ));
}

#[test]
fn scorer_failures_report_partial_comparisons() {
    let calls = Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    let scorer = StubScorer::from_fn(move |_, _| {
        c.fetch_add(1, Ordering::SeqCst);
        0.7
    });
    // PAIR_PLUS_EXPLANATIONS without a source fails at assembly on the first comparison
    let cands: Vec<String> = vec!["a".into(), "b".into()];
    let err = select_best(&cands, &scorer, None, AssemblyMode::PairPlusExplanations).unwrap_err();
    assert!(matches!(err, TournamentError::Scorer { ref partial, .. } if partial.is_empty()));
    assert_eq!(calls.load(Ordering::SeqCst), 0);
}
