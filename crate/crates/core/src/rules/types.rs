use serde::{Deserialize, Serialize};

use super::text::{tokenize, validate_words, BanList, Verdict};

/// Opaque player identifier. Doubles as the player's private resume token,
/// so it only ever appears in that player's own snapshot.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlayerId(String);

impl PlayerId {
    pub fn new(id: impl Into<String>) -> Self {
        PlayerId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for PlayerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// One of the two Diversity Duel pairs. Image ballots use the same labels:
/// `A` is the first pair's image and `B` the second's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::A, Side::B];

    pub fn index(self) -> usize {
        match self {
            Side::A => 0,
            Side::B => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Regular,
    SecretAgent,
    Evaluator,
    Facilitator,
}

/// A playing member of a pod, in join order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seat {
    pub player: PlayerId,
    pub pair: Option<Side>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub word: String,
    pub author: PlayerId,
}

/// A prompt under construction with per-word authorship.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptDraft {
    pub tokens: Vec<Token>,
    /// System-supplied category text; never counts against a budget.
    pub category_prefix: Option<String>,
}

impl PromptDraft {
    pub fn with_prefix(prefix: Option<String>) -> Self {
        PromptDraft { tokens: Vec::new(), category_prefix: prefix }
    }

    pub fn from_text(text: &str, author: &PlayerId) -> Self {
        let mut draft = PromptDraft::default();
        draft.push_words(tokenize(text), author);
        draft
    }

    pub fn push_words<I: IntoIterator<Item = String>>(&mut self, words: I, author: &PlayerId) {
        self.tokens
            .extend(words.into_iter().map(|word| Token { word, author: author.clone() }));
    }

    pub fn words(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.word.as_str()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// The full text sent to the image generator.
    pub fn prompt_text(&self) -> String {
        let mut parts: Vec<&str> = Vec::new();
        if let Some(prefix) = &self.category_prefix {
            parts.push(prefix);
        }
        parts.extend(self.words());
        parts.join(" ")
    }

    /// `seat:word` pairs joined by spaces, used for exports.
    pub fn authorship(&self, seat_of: impl Fn(&PlayerId) -> Option<usize>) -> String {
        self.tokens
            .iter()
            .map(|t| match seat_of(&t.author) {
                Some(seat) => format!("{}:{}", seat + 1, t.word),
                None => format!("?:{}", t.word),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Validates a draft's player words (the prefix is exempt).
pub fn validate_prompt(draft: &PromptDraft, limit: usize, ban_list: &BanList) -> Verdict {
    validate_words(&draft.words(), limit, ban_list)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "ballot", rename_all = "snake_case")]
pub enum VoteTarget {
    ImageChoice { choice: Side },
    Criteria { represents: bool, diverse: bool },
    Accusation { accused: PlayerId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub voter: PlayerId,
    pub target: VoteTarget,
    /// Count of events the game had applied when the vote landed.
    pub cast_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeValue {
    FullWin,
    PartialWin,
    Loss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentOutcome {
    pub value: OutcomeValue,
    pub inclusive: bool,
    pub detected: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoScores {
    pub diversity_cue: i64,
    pub category_match: i64,
}

/// A generated image as the rules engine sees it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub attempt: u32,
    pub digest: String,
    pub backend: String,
    pub latency_ms: u64,
    pub pseudo_scores: Option<PseudoScores>,
}
