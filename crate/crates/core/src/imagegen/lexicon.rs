use std::collections::{BTreeMap, BTreeSet};

use crate::rules::{normalize_token, tokenize, PseudoScores};

pub const DEFAULT_LEXICON: &str = include_str!("../../../../fixtures/lexicon.txt");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LexiconError {
    #[error("line {line}: token outside of a section")]
    NoSection { line: usize },
    #[error("line {line}: unknown section \"{name}\"")]
    UnknownSection { line: usize, name: String },
}

/// The three word lists behind stub pseudo scores.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    pub diversity: BTreeSet<String>,
    pub bias: BTreeSet<String>,
    pub categories: BTreeMap<String, BTreeSet<String>>,
}

enum Section {
    Diversity,
    Bias,
    Category(String),
}

impl Lexicon {
    /// Parses `[diversity]`, `[bias]` and `[category: name]` sections,
    /// one token per line, `#` starting a comment.
    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut lexicon = Lexicon::default();
        let mut section = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let header = header.trim();
                section = Some(match header {
                    "diversity" => Section::Diversity,
                    "bias" => Section::Bias,
                    _ => match header.strip_prefix("category:") {
                        Some(name) => {
                            let name = name.trim().to_lowercase();
                            lexicon.categories.entry(name.clone()).or_default();
                            Section::Category(name)
                        }
                        None => {
                            return Err(LexiconError::UnknownSection {
                                line: i + 1,
                                name: header.to_string(),
                            })
                        }
                    },
                });
                continue;
            }
            let token = normalize_token(line);
            if token.is_empty() {
                continue;
            }
            match &section {
                None => return Err(LexiconError::NoSection { line: i + 1 }),
                Some(Section::Diversity) => lexicon.diversity.insert(token),
                Some(Section::Bias) => lexicon.bias.insert(token),
                Some(Section::Category(name)) => {
                    lexicon.categories.get_mut(name).expect("section registered").insert(token)
                }
            };
        }
        Ok(lexicon)
    }

    pub fn builtin() -> Self {
        Lexicon::parse(DEFAULT_LEXICON).expect("bundled lexicon parses")
    }

    pub fn category(&self, name: &str) -> Option<&BTreeSet<String>> {
        self.categories.get(&name.trim().to_lowercase())
    }

    /// Set-intersection scores over the normalized prompt tokens.
    pub fn score(&self, prompt: &str, category: Option<&str>) -> PseudoScores {
        let tokens: BTreeSet<String> = tokenize(prompt).into_iter().collect();
        let hits = |set: &BTreeSet<String>| tokens.intersection(set).count() as i64;
        PseudoScores {
            diversity_cue: hits(&self.diversity) - hits(&self.bias),
            category_match: category.and_then(|c| self.category(c)).map_or(0, hits),
        }
    }

    /// Net diversity contribution of a handful of words.
    pub fn word_cue<S: AsRef<str>>(&self, words: &[S]) -> i64 {
        words
            .iter()
            .map(|w| normalize_token(w.as_ref()))
            .map(|w| self.diversity.contains(&w) as i64 - self.bias.contains(&w) as i64)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "# test\n[diversity]\nwomen\nElderly,\n[bias]\nwhite\n[category: teachers]\nclassroom # inline\n";

    #[test]
    fn parses_sections_and_comments() {
        let lex = Lexicon::parse(SMALL).unwrap();
        assert_eq!(lex.diversity.len(), 2);
        assert!(lex.diversity.contains("elderly"));
        assert!(lex.category("Teachers").unwrap().contains("classroom"));
    }

    #[test]
    fn rejects_orphan_tokens() {
        assert_eq!(Lexicon::parse("women\n"), Err(LexiconError::NoSection { line: 1 }));
        assert!(matches!(Lexicon::parse("[colors]\n"), Err(LexiconError::UnknownSection { .. })));
    }

    #[test]
    fn counting_definition() {
        let lex = Lexicon::parse(SMALL).unwrap();
        let s = lex.score("women and elderly teachers", Some("teachers"));
        assert_eq!(s.diversity_cue, 2);
        assert_eq!(s.category_match, 0);
        let s = lex.score("white women in a classroom", Some("teachers"));
        assert_eq!(s.diversity_cue, 0);
        assert_eq!(s.category_match, 1);
        let s = lex.score("", Some("teachers"));
        assert_eq!((s.diversity_cue, s.category_match), (0, 0));
    }

    #[test]
    fn builtin_lexicon_avoids_banned_words() {
        let lex = Lexicon::builtin();
        assert!(!lex.diversity.contains("diverse"));
        assert!(lex.diversity.is_disjoint(&lex.bias));
        for c in ["construction workers", "tech employees", "teachers", "intelligent scholars", "doctor", "nurse"] {
            assert!(lex.category(c).is_some(), "{c}");
        }
    }
}
