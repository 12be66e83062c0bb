use serde::{Deserialize, Serialize};

use super::text::BanList;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameKind {
    DiversityDuel,
    SecretAgent,
}

impl GameKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GameKind::DiversityDuel => "diversity_duel",
            GameKind::SecretAgent => "secret_agent",
        }
    }
}

impl std::fmt::Display for GameKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown game \"{0}\"")]
pub struct UnknownGame(pub String);

impl std::str::FromStr for GameKind {
    type Err = UnknownGame;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "diversity_duel" | "dd" => Ok(GameKind::DiversityDuel),
            "secret_agent" | "sa" => Ok(GameKind::SecretAgent),
            _ => Err(UnknownGame(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// No pair wins the round.
    Draw,
    /// Reopen the ballot once; a second tie is a draw.
    Revote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccusationRule {
    /// Unique top-voted player; a tie at the top acquits.
    Plurality,
    /// At least three of four votes.
    StrictMajority,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentReassignment {
    PerRound,
    PerGame,
}

/// Report points per agent outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorePoints {
    pub full_win: u32,
    pub partial_win: u32,
    pub loss: u32,
}

impl Default for ScorePoints {
    fn default() -> Self {
        ScorePoints { full_win: 2, partial_win: 1, loss: 0 }
    }
}

/// Every rule knob for one game instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameConfig {
    pub kind: GameKind,
    pub rounds: usize,
    pub word_limits: Vec<usize>,
    pub compose_seconds: u64,
    pub turn_seconds: u64,
    pub words_per_turn: usize,
    pub passes: usize,
    pub max_attempts: u32,
    /// Time a pair has to pick between its generated attempts.
    pub select_seconds: u64,
    /// Ballot window for peer votes, evaluations and accusations.
    pub vote_seconds: u64,
    pub ban_list: BanList,
    pub card_deck: Vec<String>,
    pub secret_agent_categories: Vec<String>,
    pub image_vote_tie_policy: TiePolicy,
    pub accusation_rule: AccusationRule,
    pub category_is_prefix: bool,
    pub agent_reassignment: AgentReassignment,
    pub points: ScorePoints,
}

pub const POD_SIZE: usize = 4;

impl GameConfig {
    pub fn diversity_duel() -> Self {
        GameConfig {
            kind: GameKind::DiversityDuel,
            rounds: 3,
            word_limits: vec![6, 5, 4],
            compose_seconds: 45,
            turn_seconds: 30,
            words_per_turn: 2,
            passes: 1,
            max_attempts: 2,
            select_seconds: 30,
            vote_seconds: 60,
            ban_list: BanList::default(),
            card_deck: [
                "intelligent scholars",
                "construction workers",
                "teachers",
                "tech employees",
            ]
            .map(String::from)
            .to_vec(),
            secret_agent_categories: Vec::new(),
            image_vote_tie_policy: TiePolicy::Draw,
            accusation_rule: AccusationRule::Plurality,
            category_is_prefix: false,
            agent_reassignment: AgentReassignment::PerRound,
            points: ScorePoints::default(),
        }
    }

    pub fn secret_agent() -> Self {
        GameConfig {
            kind: GameKind::SecretAgent,
            rounds: 2,
            word_limits: Vec::new(),
            max_attempts: 1,
            card_deck: Vec::new(),
            secret_agent_categories: vec!["construction workers".into(), "tech employees".into()],
            category_is_prefix: true,
            ..GameConfig::diversity_duel()
        }
    }

    pub fn for_kind(kind: GameKind) -> Self {
        match kind {
            GameKind::DiversityDuel => GameConfig::diversity_duel(),
            GameKind::SecretAgent => GameConfig::secret_agent(),
        }
    }

    /// Word budget for a whole Secret Agent prompt, excluding the category prefix.
    pub fn relay_budget(&self) -> usize {
        self.words_per_turn * POD_SIZE * self.passes
    }

    /// Checks the config invariants, collecting every failing field.
    pub fn validate(&self) -> Result<(), ConfigErrors> {
        let mut errors = Vec::new();
        let mut fail = |field: &str, message: String| {
            errors.push(FieldError { field: field.to_string(), message })
        };
        if self.rounds == 0 {
            fail("rounds", "must be at least 1".into());
        }
        if self.max_attempts == 0 {
            fail("max_attempts", "must be at least 1".into());
        }
        if self.words_per_turn == 0 {
            fail("words_per_turn", "must be at least 1".into());
        }
        if self.passes == 0 {
            fail("passes", "must be at least 1".into());
        }
        for (field, secs) in [
            ("compose_seconds", self.compose_seconds),
            ("turn_seconds", self.turn_seconds),
            ("select_seconds", self.select_seconds),
            ("vote_seconds", self.vote_seconds),
        ] {
            if secs == 0 {
                fail(field, "must be at least 1 second".into());
            }
        }
        if !self.ban_list.is_normalized() {
            fail("ban_list", "entries must be lowercase without surrounding punctuation".into());
        }
        match self.kind {
            GameKind::DiversityDuel => {
                if self.word_limits.len() < self.rounds {
                    fail(
                        "word_limits",
                        format!(
                            "{} limits given for {} rounds",
                            self.word_limits.len(),
                            self.rounds
                        ),
                    );
                }
                if self.word_limits.contains(&0) {
                    fail("word_limits", "every limit must be at least 1".into());
                }
                if self.card_deck.len() < self.rounds {
                    fail(
                        "card_deck",
                        format!("{} cards cannot cover {} rounds", self.card_deck.len(), self.rounds),
                    );
                }
            }
            GameKind::SecretAgent => {
                if self.secret_agent_categories.len() != self.rounds {
                    fail(
                        "secret_agent_categories",
                        format!(
                            "{} categories given for {} rounds",
                            self.secret_agent_categories.len(),
                            self.rounds
                        ),
                    );
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(errors))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ConfigErrors(pub Vec<FieldError>);

impl std::fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> =
            self.0.iter().map(|e| format!("{}: {}", e.field, e.message)).collect();
        write!(f, "invalid config: {}", parts.join("; "))
    }
}
