//! Word handling shared by the prompt budget and the ban list.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Lowercases `raw` and strips leading/trailing punctuation.
///
/// Internal hyphens and apostrophes survive, so `steel-toe` stays one word.
/// Whitespace-only input yields the empty string.
pub fn normalize_token(raw: &str) -> String {
    raw.trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// Splits on whitespace, normalizes, and drops tokens that normalize to nothing.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(normalize_token)
        .filter(|word| !word.is_empty())
        .collect()
}

/// Normalized ban list. Construction normalizes every entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BanList(BTreeSet<String>);

impl BanList {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        BanList(
            words
                .into_iter()
                .map(|w| normalize_token(w.as_ref()))
                .filter(|w| !w.is_empty())
                .collect(),
        )
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(&normalize_token(word))
    }

    pub fn is_normalized(&self) -> bool {
        self.0.iter().all(|w| !w.is_empty() && normalize_token(w) == *w)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for BanList {
    fn default() -> Self {
        BanList::new(["diverse", "diversity"])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "detail", rename_all = "snake_case")]
pub enum Verdict {
    Valid,
    TooManyWords(usize),
    BannedWord(String),
}

impl Verdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, Verdict::Valid)
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Valid => f.write_str("valid"),
            Verdict::TooManyWords(n) => write!(f, "too many words ({n})"),
            Verdict::BannedWord(w) => write!(f, "banned word \"{w}\""),
        }
    }
}

/// Checks already-tokenized words against a word budget and the ban list.
///
/// A banned word is reported ahead of an over-budget count.
pub fn validate_words<S: AsRef<str>>(words: &[S], limit: usize, ban_list: &BanList) -> Verdict {
    if let Some(banned) = words.iter().find(|w| ban_list.contains(w.as_ref())) {
        return Verdict::BannedWord(normalize_token(banned.as_ref()));
    }
    if words.len() > limit {
        return Verdict::TooManyWords(words.len());
    }
    Verdict::Valid
}

/// Tokenizes `text` then validates it.
pub fn validate_text(text: &str, limit: usize, ban_list: &BanList) -> Verdict {
    validate_words(&tokenize(text), limit, ban_list)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_token("Diverse,"), "diverse");
        assert_eq!(normalize_token("steel-toe"), "steel-toe");
        assert_eq!(normalize_token("   "), "");
        assert_eq!(normalize_token("\"Don't!\""), "don't");
        assert_eq!(normalize_token("boots."), "boots");
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("color professors classroom humans").len(), 4);
        assert!(tokenize("").is_empty());
        // Figure-style long caption; hand count: men and women different races
        // ages heights with disabilities wearing construction vests helmets and
        // steel-toe boots.
        let long = "men and women, different races, ages, heights, with disabilities, \
                    wearing construction vests, helmets, and steel-toe boots.";
        let words = tokenize(long);
        assert_eq!(words.len(), 16);
        assert_eq!(words[14], "steel-toe");
        assert_eq!(words[15], "boots");
        assert_eq!(tokenize(" , ; teachers ").len(), 1);
    }

    #[test]
    fn validate_examples() {
        let ban = BanList::default();
        assert_eq!(
            validate_text("different ethnicity teachers with disability emotions", 6, &ban),
            Verdict::Valid
        );
        assert_eq!(
            validate_text("diverse teachers", 6, &ban),
            Verdict::BannedWord("diverse".into())
        );
        assert_eq!(
            validate_text("different looking construction workers stressed", 4, &ban),
            Verdict::TooManyWords(5)
        );
    }

    #[test]
    fn banned_takes_precedence() {
        let ban = BanList::default();
        assert_eq!(
            validate_text("a b c d e f g Diversity", 2, &ban),
            Verdict::BannedWord("diversity".into())
        );
    }

    #[test]
    fn ban_is_case_and_punctuation_insensitive() {
        let ban = BanList::new(["Diverse!"]);
        assert!(ban.is_normalized());
        assert!(ban.contains("DIVERSE,"));
        assert!(!ban.contains("diverses"));
    }
}
