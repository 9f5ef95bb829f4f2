//! Cross-encoder input assembly.

use serde::{Deserialize, Serialize};

use super::ScorerError;

pub const T1_MARKER: &str = "[T1]";
pub const T2_MARKER: &str = "[T2]";
pub const E1_MARKER: &str = "[E1]";
pub const E2_MARKER: &str = "[E2]";
pub const SEPARATOR: &str = "[SEP]";

/// Explanations longer than this many characters are cut before assembly.
pub const MAX_EXPLANATION_CHARS: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AssemblyMode {
    PairOnly,
    PairPlusExplanations,
    ExplanationsOnly,
}

impl AssemblyMode {
    pub fn needs_explanations(self) -> bool {
        !matches!(self, AssemblyMode::PairOnly)
    }

    pub fn code(self) -> u8 {
        match self {
            AssemblyMode::PairOnly => 0,
            AssemblyMode::PairPlusExplanations => 1,
            AssemblyMode::ExplanationsOnly => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(AssemblyMode::PairOnly),
            1 => Some(AssemblyMode::PairPlusExplanations),
            2 => Some(AssemblyMode::ExplanationsOnly),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AssemblyMode::PairOnly => "PAIR_ONLY",
            AssemblyMode::PairPlusExplanations => "PAIR_PLUS_EXPLANATIONS",
            AssemblyMode::ExplanationsOnly => "EXPLANATIONS_ONLY",
        }
    }
}

impl std::fmt::Display for AssemblyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AssemblyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "PAIR_ONLY" => Ok(AssemblyMode::PairOnly),
            "PAIR_PLUS_EXPLANATIONS" => Ok(AssemblyMode::PairPlusExplanations),
            "EXPLANATIONS_ONLY" => Ok(AssemblyMode::ExplanationsOnly),
            _ => Err(format!("unknown assembly mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledInput {
    pub text: String,
    pub mode: AssemblyMode,
}

fn truncate_chars(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}

/// `[T1] <t1> [SEP] [T2] <t2> [SEP] [E1] <e1> [SEP] [E2] <e2>`, keeping only
/// the segments the mode uses.
pub fn assemble_input(
    t1: &str,
    t2: &str,
    e1: Option<&str>,
    e2: Option<&str>,
    mode: AssemblyMode,
) -> Result<AssembledInput, ScorerError> {
    if t1.trim().is_empty() || t2.trim().is_empty() {
        return Err(ScorerError::EmptyText);
    }
    let mut segments: Vec<String> = Vec::with_capacity(4);
    if mode != AssemblyMode::ExplanationsOnly {
        segments.push(format!("{T1_MARKER} {t1}"));
        segments.push(format!("{T2_MARKER} {t2}"));
    }
    if mode.needs_explanations() {
        let (Some(e1), Some(e2)) = (e1, e2) else {
            return Err(ScorerError::MissingExplanation);
        };
        segments.push(format!("{E1_MARKER} {}", truncate_chars(e1, MAX_EXPLANATION_CHARS)));
        segments.push(format!("{E2_MARKER} {}", truncate_chars(e2, MAX_EXPLANATION_CHARS)));
    }
    Ok(AssembledInput { text: segments.join(&format!(" {SEPARATOR} ")), mode })
}
