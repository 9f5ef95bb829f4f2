//! Replays the worked paraphrase example end to end from recorded fixtures.

use std::path::PathBuf;
use std::sync::Arc;

use cream_core::generator::{Generator, ProviderRef, ReplayProvider, ResponseCache};
use cream_core::scorer::{AssemblyMode, ReplayScorer};
use cream_core::tournament::{generate_candidates, select_best, ParaphraseConfig, ReplayParaphraser};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/worked_example").join(name)
}

#[test]
fn replayed_compose_picks_the_published_winner() {
    let draft = std::fs::read_to_string(fixture("draft.txt")).unwrap();
    let expected = std::fs::read_to_string(fixture("winner.txt")).unwrap();
    let paraphraser = ReplayParaphraser::from_path(&fixture("paraphrases.json")).unwrap();
    let scorer = ReplayScorer::from_path(&fixture("scores.json")).unwrap();
    let generator = Generator::new(
        ProviderRef::stub("claude", "claude-v1"),
        Arc::new(ReplayProvider::from_path(&fixture("explanations.json")).unwrap()),
        Arc::new(ResponseCache::in_memory()),
    )
    .unwrap();

    let candidates = generate_candidates(&draft, &paraphraser, &ParaphraseConfig::default()).unwrap();
    // the second and fourth recorded paraphrases are the same text
    assert_eq!(candidates.len(), 5);
    assert_eq!(candidates[0], draft);

    let result = select_best(&candidates, &scorer, Some(&generator), AssemblyMode::PairPlusExplanations).unwrap();
    assert_eq!(result.winner, expected);
    assert_eq!(result.winner_index, 2);
    assert_eq!(result.champion_path, vec![0, 1, 2]);
    assert_eq!(result.comparisons.len(), 4);
    assert_eq!(result.explanations.len(), 5);
    assert_eq!(generator.provider_requests(), 5);
}
