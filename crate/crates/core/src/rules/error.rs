use serde::{Deserialize, Serialize};

use super::state::Phase;
use super::text::Verdict;
use super::types::PlayerId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BallotError {
    #[error("{voter} has not voted")]
    MissingVoter { voter: PlayerId },
    #[error("{voter} voted more than once")]
    DuplicateVoter { voter: PlayerId },
    #[error("{voter} may not vote on this ballot")]
    Ineligible { voter: PlayerId },
    #[error("{voter} already voted; the first vote stands")]
    AlreadyVoted { voter: PlayerId },
    #[error("{target} is not a valid choice")]
    InvalidTarget { target: String },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RulesError {
    #[error("{event} is not allowed during {phase:?}")]
    Phase { phase: Phase, event: &'static str },
    #[error("deadline {deadline} passed (event at {at})")]
    Deadline { deadline: u64, at: u64 },
    #[error("deadline {deadline} not reached (event at {at})")]
    DeadlineNotReached { deadline: u64, at: u64 },
    #[error("all {max} generation attempts used")]
    Attempt { max: u32 },
    #[error("prompt rejected: {0}")]
    Validation(Verdict),
    #[error(transparent)]
    Ballot(#[from] BallotError),
    #[error("{player} acted out of turn")]
    NotYourTurn { player: PlayerId },
    #[error("{player} is not a member of this pod")]
    NotInPod { player: PlayerId },
    #[error("{player} already submitted")]
    AlreadySubmitted { player: PlayerId },
    #[error("attempt {attempt} is still generating")]
    AttemptPending { attempt: u32 },
    #[error("no image for attempt {attempt}")]
    UnknownAttempt { attempt: u32 },
    #[error("round {round} out of range ({rounds} rounds)")]
    RoundOutOfRange { round: usize, rounds: usize },
    #[error("card deck is empty")]
    EmptyDeck,
    #[error("pod has {0} players, need 4")]
    PodSize(usize),
    #[error("no evaluators voted")]
    NoEvaluators,
}

impl RulesError {
    /// Short machine-readable code surfaced in protocol error replies.
    pub fn code(&self) -> &'static str {
        match self {
            RulesError::Phase { .. } => "phase",
            RulesError::Deadline { .. } | RulesError::DeadlineNotReached { .. } => "deadline",
            RulesError::Attempt { .. } => "attempt",
            RulesError::Validation(_) => "validation",
            RulesError::Ballot(_) => "ballot",
            RulesError::NotYourTurn { .. } => "turn",
            RulesError::NotInPod { .. } => "not_in_pod",
            RulesError::AlreadySubmitted { .. } => "already_submitted",
            RulesError::UnknownAttempt { .. } | RulesError::AttemptPending { .. } => "attempt",
            RulesError::RoundOutOfRange { .. }
            | RulesError::EmptyDeck
            | RulesError::PodSize(_)
            | RulesError::NoEvaluators => "rules",
        }
    }
}
