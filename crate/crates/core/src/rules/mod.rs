//! Pure rules for both games: no I/O and no clock. Time arrives on events.

mod config;
mod draw;
mod error;
mod state;
mod tally;
mod text;
mod types;
mod vectors;

pub use config::{
    AccusationRule, AgentReassignment, ConfigErrors, FieldError, GameConfig, GameKind,
    ScorePoints, TiePolicy, UnknownGame, POD_SIZE,
};
pub use draw::{assign_secret_agent, derive_seed, draw_card};
pub use error::{BallotError, RulesError};
pub use state::{
    advance, Attempt, DuelRound, Effect, EventKind, GameEvent, GameOutcome, GameState, Override,
    PairWork, Phase, RelayRound, RoundDetail, RoundScore, RoundState, RoundSummary, Transition,
};
pub use tally::{
    count_accusations, count_image_votes, evaluate_image, score_agent, tally_accusation,
    tally_image_votes, word_limit_for_round, AccusationTally, CriterionCount, Evaluation,
    ImageTally, ImageVerdict, ImageVoteOutcome,
};
pub use text::{normalize_token, tokenize, validate_text, validate_words, BanList, Verdict};
pub use vectors::{
    validation_vectors, vectors_json, ValidationCase, VectorFile, CAPTION_LIMITS, CAPTION_PROMPTS,
};
pub use types::{
    validate_prompt, AgentOutcome, ImageRef, OutcomeValue, PlayerId, PromptDraft, PseudoScores,
    Role, Seat, Side, Token, VoteRecord, VoteTarget,
};
