//! Pairwise crowd-reaction assessment engine.
//!
//! The pipeline runs in four stages:
//!
//! * [`corpus`] ingests line-delimited tweet dumps and attaches topic annotations.
//! * [`pairing`] turns a corpus into labeled tweet pairs under the weekday, margin,
//!   temporal and topical retention rules, and splits them by time.
//! * [`generator`] renders comparison and "why is this engaging" prompts, calls
//!   pluggable providers and caches every response by content digest.
//! * [`scorer`] assembles cross-encoder style inputs (tweets plus explanations),
//!   trains a hashed n-gram pairwise classifier and predicts which text wins.
//!
//! [`tournament`] picks the best paraphrase of a draft by sequential pairwise
//! comparison and [`eval`] computes accuracy, positive-class F1, topic and bucket
//! breakdowns and a paired randomization test between systems.

pub mod corpus;
pub mod digest;
pub mod eval;
pub mod generator;
pub mod jsonl;
pub mod pairing;
pub mod scorer;
pub mod synthetic;
pub mod tournament;
pub mod transport;

pub use corpus::{Corpus, IngestConfig, IngestReport, TopicAnnotation, TopicVocabulary, Tweet};
pub use eval::{BucketSpec, EvalReport, PredictionSet};
pub use generator::{Explanation, Generator, ProviderRef, Verdict};
pub use pairing::{LabeledPair, PairingConfig, StatsReport};
pub use scorer::{AssembledInput, AssemblyMode, PairScorer, PairwiseModel, ScoredComparison, TrainConfig};
pub use tournament::{ParaphraseConfig, TournamentResult};
