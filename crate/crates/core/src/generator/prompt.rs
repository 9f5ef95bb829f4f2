//! Prompt templates and verdict parsing.

use super::GeneratorError;

pub const COMPARE_QUESTION: &str = "Will text-1 receive more reactions than text-2. Answer me with \"yes\", \"no\", just one word.";
pub const ENGAGING_QUESTION: &str = "Why is the following text so engaging?";
pub const COMPLETION_STUB: &str = "The text is engaging because";

fn non_empty(text: &str) -> Result<(), GeneratorError> {
    if text.trim().is_empty() {
        Err(GeneratorError::EmptyText)
    } else {
        Ok(())
    }
}

/// Direct comparison prompt asking for a one-word yes/no answer.
pub fn render_compare_prompt(t1_text: &str, t2_text: &str) -> Result<String, GeneratorError> {
    non_empty(t1_text)?;
    non_empty(t2_text)?;
    Ok(format!("text-1: {t1_text}\ntext-2: {t2_text}\n{COMPARE_QUESTION}"))
}

/// Explanation prompt. Instruction-tuned completion models get a trailing
/// sentence stem to continue; chat models get the bare question.
pub fn render_engaging_prompt(text: &str, with_completion_stub: bool) -> Result<String, GeneratorError> {
    non_empty(text)?;
    let mut prompt = format!("{ENGAGING_QUESTION}\nText: {text}");
    if with_completion_stub {
        prompt.push('\n');
        prompt.push_str(COMPLETION_STUB);
    }
    Ok(prompt)
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Verdict {
    /// `None` means abstain: the answer was neither "yes" nor "no", or the provider refused.
    pub t1_wins: Option<bool>,
    pub raw: String,
    #[serde(default)]
    pub refused: bool,
}

impl Verdict {
    pub fn is_abstain(&self) -> bool {
        self.t1_wins.is_none()
    }
}

/// Case-insensitive match on the first alphabetic token. Total: anything that
/// is not "yes" or "no" abstains.
pub fn parse_verdict(raw: &str) -> Verdict {
    let first = raw
        .split(|c: char| !c.is_alphabetic())
        .find(|tok| !tok.is_empty())
        .map(str::to_lowercase);
    let t1_wins = match first.as_deref() {
        Some("yes") => Some(true),
        Some("no") => Some(false),
        _ => None,
    };
    Verdict { t1_wins, raw: raw.to_string(), refused: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compare_template() {
        let p = render_compare_prompt("A", "B").unwrap();
        assert_eq!(
            p,
            "text-1: A\ntext-2: B\nWill text-1 receive more reactions than text-2. Answer me with \"yes\", \"no\", just one word."
        );
        assert!(p.contains("just one word"));
        assert!(matches!(render_compare_prompt("A", ""), Err(GeneratorError::EmptyText)));
    }

    #[test]
    fn engaging_template() {
        assert_eq!(render_engaging_prompt("Hi", false).unwrap(), "Why is the following text so engaging?\nText: Hi");
        let stub = render_engaging_prompt("Hi", true).unwrap();
        assert_eq!(stub.lines().count(), 3);
        assert!(stub.ends_with("engaging because"));
        assert!(render_engaging_prompt("", true).is_err());
        assert!(render_engaging_prompt("", false).is_err());
    }

    #[test]
    fn verdicts() {
        assert_eq!(parse_verdict("Yes.").t1_wins, Some(true));
        assert_eq!(parse_verdict("no").t1_wins, Some(false));
        assert_eq!(parse_verdict("  **NO**, because").t1_wins, Some(false));
        let abstain = parse_verdict("I cannot determine that.");
        assert!(abstain.is_abstain());
        assert_eq!(abstain.raw, "I cannot determine that.");
        assert!(parse_verdict("").is_abstain());
        assert!(parse_verdict("yesterday").is_abstain());
    }
}
