//! The per-pod state machine. `advance` is the only way a game moves.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{AgentReassignment, GameConfig, GameKind, TiePolicy, POD_SIZE};
use super::draw::{assign_secret_agent, derive_seed, draw_card};
use super::error::{BallotError, RulesError};
use super::tally::{
    count_accusations, count_image_votes, empty_verdict, evaluate_image, score_agent,
    word_limit_for_round, AccusationTally, Evaluation, ImageTally, ImageVerdict,
    ImageVoteOutcome,
};
use super::text::{tokenize, validate_words, Verdict};
use super::types::{
    AgentOutcome, ImageRef, OutcomeValue, PlayerId, PromptDraft, Seat, Side, VoteRecord,
    VoteTarget,
};
use crate::imagegen::AttemptBudget;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Lobby,
    RoundSetup,
    PromptComposition,
    Generation,
    ImageSelection,
    PeerVoting,
    ExternalEvaluation,
    Accusation,
    RoundResult,
    GameResult,
}

impl Phase {
    pub const ALL: [Phase; 10] = [
        Phase::Lobby,
        Phase::RoundSetup,
        Phase::PromptComposition,
        Phase::Generation,
        Phase::ImageSelection,
        Phase::PeerVoting,
        Phase::ExternalEvaluation,
        Phase::Accusation,
        Phase::RoundResult,
        Phase::GameResult,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Override {
    ExtendDeadline { seconds: u64 },
    /// Close the current timed phase now, as if its deadline had passed.
    ForceExpire,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    PlayerReady { player: PlayerId },
    CardDrawn { player: PlayerId },
    /// `submit: false` saves partial work that a deadline will auto-submit.
    WordsSubmitted { player: PlayerId, text: String, submit: bool },
    DeadlineExpired,
    ImageGenerated { side: Option<Side>, image: ImageRef },
    /// The backend timed out; the attempt is re-offered without using budget.
    GenerationFailed { side: Option<Side>, attempt: u32, reason: String },
    AttemptRequested { player: PlayerId, text: String },
    ImageSelected { player: PlayerId, attempt: u32 },
    VoteCast { voter: PlayerId, choice: Side },
    EvaluatorsAssigned { evaluators: Vec<PlayerId> },
    EvaluationReceived { evaluator: PlayerId, represents: bool, diverse: bool },
    AccusationCast { voter: PlayerId, accused: PlayerId },
    FacilitatorOverride { action: Override },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::PlayerReady { .. } => "PlayerReady",
            EventKind::CardDrawn { .. } => "CardDrawn",
            EventKind::WordsSubmitted { .. } => "WordsSubmitted",
            EventKind::DeadlineExpired => "DeadlineExpired",
            EventKind::ImageGenerated { .. } => "ImageGenerated",
            EventKind::GenerationFailed { .. } => "GenerationFailed",
            EventKind::AttemptRequested { .. } => "AttemptRequested",
            EventKind::ImageSelected { .. } => "ImageSelected",
            EventKind::VoteCast { .. } => "VoteCast",
            EventKind::EvaluatorsAssigned { .. } => "EvaluatorsAssigned",
            EventKind::EvaluationReceived { .. } => "EvaluationReceived",
            EventKind::AccusationCast { .. } => "AccusationCast",
            EventKind::FacilitatorOverride { .. } => "FacilitatorOverride",
        }
    }
}

/// An event stamped with server time in milliseconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameEvent {
    pub at: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl GameEvent {
    pub fn new(at: u64, kind: EventKind) -> Self {
        GameEvent { at, kind }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RoundScore {
    PairWin { winner: Option<Side> },
    Agent { outcome: AgentOutcome },
}

/// Work the host must perform after a transition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum Effect {
    StartTimer { deadline: u64 },
    RequestImage {
        side: Option<Side>,
        attempt: u32,
        prompt: String,
        category: String,
        seed: u64,
    },
    Broadcast,
    RevealAgent { round: usize, agent: PlayerId },
    RecordScore { round: usize, score: RoundScore },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attempt {
    pub prompt: PromptDraft,
    pub image: Option<ImageRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairWork {
    pub draft: PromptDraft,
    pub submitted: bool,
    pub budget: AttemptBudget,
    pub attempts: Vec<Attempt>,
    pub selected: Option<u32>,
}

impl PairWork {
    fn new(max_attempts: u32) -> Self {
        PairWork {
            draft: PromptDraft::default(),
            submitted: false,
            budget: AttemptBudget::new(max_attempts),
            attempts: Vec::new(),
            selected: None,
        }
    }

    pub fn pending(&self) -> Option<u32> {
        pending_attempt(&self.attempts)
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageRef> {
        self.attempts.iter().filter_map(|a| a.image.as_ref())
    }

    pub fn selected_image(&self) -> Option<&ImageRef> {
        self.selected.and_then(|i| self.attempts.get(i as usize)?.image.as_ref())
    }
}

fn pending_attempt(attempts: &[Attempt]) -> Option<u32> {
    attempts.iter().position(|a| a.image.is_none()).map(|i| i as u32)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuelRound {
    pub limit: usize,
    pub pairs: BTreeMap<Side, PairWork>,
    pub votes: BTreeMap<PlayerId, VoteRecord>,
    pub revoted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayRound {
    pub draft: PromptDraft,
    pub turn_order: Vec<PlayerId>,
    pub turn: usize,
    pub pending_words: Vec<String>,
    pub budget: AttemptBudget,
    pub attempts: Vec<Attempt>,
    pub evaluations: BTreeMap<PlayerId, VoteRecord>,
    pub verdict: Option<ImageVerdict>,
    pub accusations: BTreeMap<PlayerId, VoteRecord>,
}

impl RelayRound {
    pub fn total_turns(&self, passes: usize) -> usize {
        self.turn_order.len() * passes
    }

    pub fn active_player(&self, passes: usize) -> Option<&PlayerId> {
        (self.turn < self.total_turns(passes))
            .then(|| &self.turn_order[self.turn % self.turn_order.len()])
    }

    pub fn image(&self) -> Option<&ImageRef> {
        self.attempts.iter().rev().find_map(|a| a.image.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "game", rename_all = "snake_case")]
pub enum RoundState {
    Idle,
    Duel(DuelRound),
    Relay(RelayRound),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "game", rename_all = "snake_case")]
pub enum RoundDetail {
    Duel {
        attempts: BTreeMap<Side, Vec<Attempt>>,
        selected: BTreeMap<Side, u32>,
        tally: ImageTally,
        revoted: bool,
        winner: Option<Side>,
    },
    Relay {
        prompt: PromptDraft,
        image: Option<ImageRef>,
        verdict: ImageVerdict,
        accusation: AccusationTally,
        agent: PlayerId,
        outcome: AgentOutcome,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub category: String,
    pub detail: RoundDetail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "game", rename_all = "snake_case")]
pub enum GameOutcome {
    Duel { wins: BTreeMap<Side, u32>, winners: Vec<Side> },
    Relay { outcomes: Vec<AgentOutcome>, agent_points: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameState {
    pub config: GameConfig,
    pub seed: u64,
    pub roster: Vec<Seat>,
    pub phase: Phase,
    pub round_index: usize,
    pub events_applied: u64,
    pub ready: BTreeSet<PlayerId>,
    pub deck: Vec<String>,
    pub category: Option<String>,
    pub deadline: Option<u64>,
    pub agent: Option<PlayerId>,
    pub agent_revealed: bool,
    pub evaluators: Vec<PlayerId>,
    pub round: RoundState,
    pub pair_wins: BTreeMap<Side, u32>,
    pub outcomes: Vec<AgentOutcome>,
    pub history: Vec<RoundSummary>,
    pub result: Option<GameOutcome>,
}

pub type Transition = (GameState, Vec<Effect>);

/// Pure transition function: the rejected case leaves `state` untouched.
pub fn advance(state: &GameState, event: &GameEvent) -> Result<Transition, RulesError> {
    let mut next = state.clone();
    let mut effects = Vec::new();
    next.apply(event, &mut effects)?;
    next.events_applied += 1;
    effects.push(Effect::Broadcast);
    Ok((next, effects))
}

impl GameState {
    /// A fresh game in the lobby. Diversity Duel seats fill pairs in join order.
    pub fn new(config: GameConfig, players: Vec<PlayerId>, seed: u64) -> Result<Self, RulesError> {
        if players.len() != POD_SIZE {
            return Err(RulesError::PodSize(players.len()));
        }
        let roster = players
            .into_iter()
            .enumerate()
            .map(|(i, player)| Seat {
                player,
                pair: match config.kind {
                    GameKind::DiversityDuel => Some(if i < 2 { Side::A } else { Side::B }),
                    GameKind::SecretAgent => None,
                },
            })
            .collect();
        let pair_wins = match config.kind {
            GameKind::DiversityDuel => Side::BOTH.iter().map(|s| (*s, 0)).collect(),
            GameKind::SecretAgent => BTreeMap::new(),
        };
        Ok(GameState {
            deck: config.card_deck.clone(),
            config,
            seed,
            roster,
            phase: Phase::Lobby,
            round_index: 0,
            events_applied: 0,
            ready: BTreeSet::new(),
            category: None,
            deadline: None,
            agent: None,
            agent_revealed: false,
            evaluators: Vec::new(),
            round: RoundState::Idle,
            pair_wins,
            outcomes: Vec::new(),
            history: Vec::new(),
            result: None,
        })
    }

    pub fn kind(&self) -> GameKind {
        self.config.kind
    }

    pub fn players(&self) -> Vec<PlayerId> {
        self.roster.iter().map(|s| s.player.clone()).collect()
    }

    pub fn seat_of(&self, player: &PlayerId) -> Option<usize> {
        self.roster.iter().position(|s| &s.player == player)
    }

    pub fn pair_of(&self, player: &PlayerId) -> Option<Side> {
        self.roster.iter().find(|s| &s.player == player).and_then(|s| s.pair)
    }

    /// SHA-256 over the canonical JSON form, lowercase hex.
    pub fn state_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("game state serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn duel(&self) -> Option<&DuelRound> {
        match &self.round {
            RoundState::Duel(d) => Some(d),
            _ => None,
        }
    }

    pub fn relay(&self) -> Option<&RelayRound> {
        match &self.round {
            RoundState::Relay(r) => Some(r),
            _ => None,
        }
    }

    fn duel_mut(&mut self) -> &mut DuelRound {
        match &mut self.round {
            RoundState::Duel(d) => d,
            _ => unreachable!("duel phase without duel round"),
        }
    }

    fn relay_mut(&mut self) -> &mut RelayRound {
        match &mut self.round {
            RoundState::Relay(r) => r,
            _ => unreachable!("relay phase without relay round"),
        }
    }

    fn reject(&self, event: &GameEvent) -> RulesError {
        RulesError::Phase { phase: self.phase, event: event.kind.name() }
    }

    fn check_deadline(&self, at: u64) -> Result<(), RulesError> {
        match self.deadline {
            Some(deadline) if at > deadline => Err(RulesError::Deadline { deadline, at }),
            _ => Ok(()),
        }
    }

    fn member(&self, player: &PlayerId) -> Result<(), RulesError> {
        match self.seat_of(player) {
            Some(_) => Ok(()),
            None => Err(RulesError::NotInPod { player: player.clone() }),
        }
    }

    fn set_deadline(&mut self, at: u64, seconds: u64, effects: &mut Vec<Effect>) {
        let deadline = at + seconds * 1000;
        self.deadline = Some(deadline);
        effects.push(Effect::StartTimer { deadline });
    }

    fn category_text(&self) -> String {
        self.category.clone().unwrap_or_default()
    }

    fn image_seed(&self, side: Option<Side>, attempt: u32) -> u64 {
        let lane = side.map_or(2, |s| s.index() as u64);
        derive_seed(self.seed, "image", (self.round_index as u64) << 16 | lane << 8 | attempt as u64)
    }

    fn request_image(&self, side: Option<Side>, attempt: u32, prompt: &PromptDraft) -> Effect {
        Effect::RequestImage {
            side,
            attempt,
            prompt: prompt.prompt_text(),
            category: self.category_text(),
            seed: self.image_seed(side, attempt),
        }
    }

    fn apply(&mut self, event: &GameEvent, fx: &mut Vec<Effect>) -> Result<(), RulesError> {
        let at = event.at;
        let kind = self.kind();
        match (&event.kind, self.phase) {
            (EventKind::PlayerReady { player }, Phase::Lobby) => {
                self.member(player)?;
                self.ready.insert(player.clone());
                if self.ready.len() == self.roster.len() {
                    self.ready.clear();
                    self.start_round(0);
                }
            }
            (EventKind::PlayerReady { player }, Phase::RoundResult) => {
                self.member(player)?;
                if self.round_index + 1 < self.config.rounds {
                    self.start_round(self.round_index + 1);
                } else {
                    self.finish();
                }
            }
            (EventKind::CardDrawn { player }, Phase::RoundSetup) => {
                self.member(player)?;
                self.begin_composition(at, fx)?;
            }
            (EventKind::WordsSubmitted { player, text, submit }, Phase::PromptComposition) => {
                self.check_deadline(at)?;
                match kind {
                    GameKind::DiversityDuel => self.duel_words(player, text, *submit, fx)?,
                    GameKind::SecretAgent => self.relay_words(player, text, *submit, at, fx)?,
                }
            }
            (EventKind::DeadlineExpired, _) => {
                let deadline = self.deadline.ok_or_else(|| self.reject(event))?;
                if at < deadline {
                    return Err(RulesError::DeadlineNotReached { deadline, at });
                }
                self.expire(at, fx);
            }
            (EventKind::FacilitatorOverride { action }, _) => {
                let deadline = self.deadline.ok_or_else(|| self.reject(event))?;
                match action {
                    Override::ExtendDeadline { seconds } => {
                        if at > deadline {
                            return Err(RulesError::Deadline { deadline, at });
                        }
                        let extended = deadline + seconds * 1000;
                        self.deadline = Some(extended);
                        fx.push(Effect::StartTimer { deadline: extended });
                    }
                    Override::ForceExpire => self.expire(at, fx),
                }
            }
            (
                EventKind::ImageGenerated { side, image },
                Phase::Generation | Phase::ImageSelection,
            ) => self.image_arrived(*side, image, at, fx, event)?,
            (
                EventKind::GenerationFailed { side, attempt, .. },
                Phase::Generation | Phase::ImageSelection,
            ) => {
                let attempts = self.attempts_for(*side).ok_or_else(|| self.reject(event))?;
                if pending_attempt(attempts) != Some(*attempt) {
                    return Err(RulesError::UnknownAttempt { attempt: *attempt });
                }
                let prompt = attempts[*attempt as usize].prompt.clone();
                tracing::warn!(attempt, "image generation failed; re-offering attempt");
                fx.push(self.request_image(*side, *attempt, &prompt));
            }
            (
                EventKind::AttemptRequested { player, text },
                Phase::Generation | Phase::ImageSelection,
            ) if kind == GameKind::DiversityDuel => {
                self.check_deadline(at)?;
                self.duel_attempt(player, text, fx)?;
            }
            (EventKind::ImageSelected { player, attempt }, Phase::ImageSelection) => {
                self.check_deadline(at)?;
                self.duel_select(player, *attempt, at, fx)?;
            }
            (EventKind::VoteCast { voter, choice }, Phase::PeerVoting) => {
                self.check_deadline(at)?;
                self.member(voter)?;
                let cast_at = self.events_applied;
                let round = self.duel_mut();
                if round.votes.contains_key(voter) {
                    return Err(BallotError::AlreadyVoted { voter: voter.clone() }.into());
                }
                round.votes.insert(
                    voter.clone(),
                    VoteRecord {
                        voter: voter.clone(),
                        target: VoteTarget::ImageChoice { choice: *choice },
                        cast_at,
                    },
                );
                if round.votes.len() == POD_SIZE {
                    self.close_peer_vote(at, fx);
                }
            }
            (EventKind::EvaluatorsAssigned { evaluators }, phase)
                if kind == GameKind::SecretAgent && phase != Phase::GameResult =>
            {
                if let Some(p) = evaluators.iter().find(|p| self.seat_of(p).is_some()) {
                    return Err(BallotError::Ineligible { voter: p.clone() }.into());
                }
                if self.relay().is_some_and(|r| !r.evaluations.is_empty()) {
                    return Err(self.reject(event));
                }
                self.evaluators = evaluators.clone();
            }
            (
                EventKind::EvaluationReceived { evaluator, represents, diverse },
                Phase::ExternalEvaluation,
            ) => {
                self.check_deadline(at)?;
                if !self.evaluators.contains(evaluator) {
                    return Err(BallotError::Ineligible { voter: evaluator.clone() }.into());
                }
                let cast_at = self.events_applied;
                let expected = self.evaluators.len();
                let round = self.relay_mut();
                if round.evaluations.contains_key(evaluator) {
                    return Err(BallotError::AlreadyVoted { voter: evaluator.clone() }.into());
                }
                round.evaluations.insert(
                    evaluator.clone(),
                    VoteRecord {
                        voter: evaluator.clone(),
                        target: VoteTarget::Criteria { represents: *represents, diverse: *diverse },
                        cast_at,
                    },
                );
                if round.evaluations.len() == expected {
                    self.close_evaluation(at, fx);
                }
            }
            (EventKind::AccusationCast { voter, accused }, Phase::Accusation) => {
                self.check_deadline(at)?;
                self.member(voter)?;
                if self.seat_of(accused).is_none() {
                    return Err(BallotError::InvalidTarget { target: accused.to_string() }.into());
                }
                let cast_at = self.events_applied;
                let round = self.relay_mut();
                if round.accusations.contains_key(voter) {
                    return Err(BallotError::AlreadyVoted { voter: voter.clone() }.into());
                }
                round.accusations.insert(
                    voter.clone(),
                    VoteRecord {
                        voter: voter.clone(),
                        target: VoteTarget::Accusation { accused: accused.clone() },
                        cast_at,
                    },
                );
                if round.accusations.len() == POD_SIZE {
                    self.close_accusation(fx);
                }
            }
            _ => return Err(self.reject(event)),
        }
        Ok(())
    }

    fn start_round(&mut self, round: usize) {
        self.round_index = round;
        self.phase = Phase::RoundSetup;
        self.deadline = None;
        self.round = RoundState::Idle;
        self.category = None;
        if self.kind() == GameKind::SecretAgent {
            let reassign = match self.config.agent_reassignment {
                AgentReassignment::PerRound => true,
                AgentReassignment::PerGame => self.agent.is_none(),
            };
            if reassign {
                let seed_round = match self.config.agent_reassignment {
                    AgentReassignment::PerRound => round as u64,
                    AgentReassignment::PerGame => 0,
                };
                let agent = assign_secret_agent(&self.players(), derive_seed(self.seed, "agent", seed_round))
                    .expect("roster holds a full pod");
                self.agent = Some(agent);
            }
            self.agent_revealed = false;
            self.category = self.config.secret_agent_categories.get(round).cloned();
        }
    }

    fn begin_composition(&mut self, at: u64, fx: &mut Vec<Effect>) -> Result<(), RulesError> {
        match self.kind() {
            GameKind::DiversityDuel => {
                let limit = word_limit_for_round(&self.config, self.round_index)?;
                let seed = derive_seed(self.seed, "card", self.round_index as u64);
                let (card, rest) = draw_card(&self.deck, seed)?;
                self.category = Some(card);
                self.deck = rest;
                let max = self.config.max_attempts;
                self.round = RoundState::Duel(DuelRound {
                    limit,
                    pairs: Side::BOTH.iter().map(|s| (*s, PairWork::new(max))).collect(),
                    votes: BTreeMap::new(),
                    revoted: false,
                });
                self.phase = Phase::PromptComposition;
                self.set_deadline(at, self.config.compose_seconds, fx);
            }
            GameKind::SecretAgent => {
                let prefix = self.config.category_is_prefix.then(|| self.category_text());
                let mut order = self.players();
                order.rotate_left(self.round_index % POD_SIZE);
                self.round = RoundState::Relay(RelayRound {
                    draft: PromptDraft::with_prefix(prefix),
                    turn_order: order,
                    turn: 0,
                    pending_words: Vec::new(),
                    budget: AttemptBudget::new(self.config.max_attempts),
                    attempts: Vec::new(),
                    evaluations: BTreeMap::new(),
                    verdict: None,
                    accusations: BTreeMap::new(),
                });
                self.phase = Phase::PromptComposition;
                self.set_deadline(at, self.config.turn_seconds, fx);
            }
        }
        Ok(())
    }

    fn duel_words(
        &mut self,
        player: &PlayerId,
        text: &str,
        submit: bool,
        fx: &mut Vec<Effect>,
    ) -> Result<(), RulesError> {
        let side = self.pair_of(player).ok_or(RulesError::NotInPod { player: player.clone() })?;
        let ban = self.config.ban_list.clone();
        let round = self.duel_mut();
        let limit = round.limit;
        let work = round.pairs.get_mut(&side).expect("both pairs present");
        if work.submitted {
            return Err(RulesError::AlreadySubmitted { player: player.clone() });
        }
        let words = tokenize(text);
        match validate_words(&words, limit, &ban) {
            Verdict::Valid => {}
            verdict => return Err(RulesError::Validation(verdict)),
        }
        work.draft = PromptDraft::default();
        work.draft.push_words(words, player);
        work.submitted = submit;
        if round.pairs.values().all(|w| w.submitted) {
            self.start_duel_generation(fx);
        }
        Ok(())
    }

    fn start_duel_generation(&mut self, fx: &mut Vec<Effect>) {
        let category = self.category_text();
        let mut requests = Vec::new();
        for (side, work) in self.duel_mut().pairs.iter_mut() {
            work.submitted = true;
            let mut prompt = work.draft.clone();
            if prompt.is_empty() {
                prompt.category_prefix = Some(category.clone());
            }
            let attempt = work.budget.request_attempt().expect("fresh budget");
            work.attempts.push(Attempt { prompt: prompt.clone(), image: None });
            requests.push((*side, attempt, prompt));
        }
        for (side, attempt, prompt) in requests {
            fx.push(self.request_image(Some(side), attempt, &prompt));
        }
        self.phase = Phase::Generation;
        self.deadline = None;
    }

    fn relay_words(
        &mut self,
        player: &PlayerId,
        text: &str,
        submit: bool,
        at: u64,
        fx: &mut Vec<Effect>,
    ) -> Result<(), RulesError> {
        self.member(player)?;
        let passes = self.config.passes;
        let per_turn = self.config.words_per_turn;
        let ban = self.config.ban_list.clone();
        let round = self.relay_mut();
        if round.active_player(passes) != Some(player) {
            return Err(RulesError::NotYourTurn { player: player.clone() });
        }
        let words = tokenize(text);
        match validate_words(&words, per_turn, &ban) {
            Verdict::Valid => {}
            verdict => return Err(RulesError::Validation(verdict)),
        }
        if submit {
            round.draft.push_words(words, player);
            self.next_turn(at, fx);
        } else {
            round.pending_words = words;
        }
        Ok(())
    }

    fn next_turn(&mut self, at: u64, fx: &mut Vec<Effect>) {
        let passes = self.config.passes;
        let round = self.relay_mut();
        round.turn += 1;
        round.pending_words.clear();
        if round.turn >= round.total_turns(passes) {
            let attempt = round.budget.request_attempt().expect("fresh budget");
            let prompt = round.draft.clone();
            round.attempts.push(Attempt { prompt: prompt.clone(), image: None });
            fx.push(self.request_image(None, attempt, &prompt));
            self.phase = Phase::Generation;
            self.deadline = None;
        } else {
            self.set_deadline(at, self.config.turn_seconds, fx);
        }
    }

    fn attempts_for(&self, side: Option<Side>) -> Option<&Vec<Attempt>> {
        match (&self.round, side) {
            (RoundState::Duel(d), Some(side)) => d.pairs.get(&side).map(|w| &w.attempts),
            (RoundState::Relay(r), None) => Some(&r.attempts),
            _ => None,
        }
    }

    fn image_arrived(
        &mut self,
        side: Option<Side>,
        image: &ImageRef,
        at: u64,
        fx: &mut Vec<Effect>,
        event: &GameEvent,
    ) -> Result<(), RulesError> {
        let attempts = match (&mut self.round, side) {
            (RoundState::Duel(d), Some(side)) => {
                &mut d.pairs.get_mut(&side).expect("both pairs present").attempts
            }
            (RoundState::Relay(r), None) if self.phase == Phase::Generation => &mut r.attempts,
            _ => return Err(RulesError::Phase { phase: self.phase, event: event.kind.name() }),
        };
        if pending_attempt(attempts) != Some(image.attempt) {
            return Err(RulesError::UnknownAttempt { attempt: image.attempt });
        }
        attempts[image.attempt as usize].image = Some(image.clone());
        match self.kind() {
            GameKind::DiversityDuel => {
                let all_ready = self.duel_mut().pairs.values().all(|w| w.pending().is_none());
                if self.phase == Phase::Generation && all_ready {
                    self.phase = Phase::ImageSelection;
                    self.set_deadline(at, self.config.select_seconds, fx);
                }
            }
            GameKind::SecretAgent => {
                self.phase = Phase::ExternalEvaluation;
                self.set_deadline(at, self.config.vote_seconds, fx);
            }
        }
        Ok(())
    }

    fn duel_attempt(
        &mut self,
        player: &PlayerId,
        text: &str,
        fx: &mut Vec<Effect>,
    ) -> Result<(), RulesError> {
        let side = self.pair_of(player).ok_or(RulesError::NotInPod { player: player.clone() })?;
        let ban = self.config.ban_list.clone();
        let round = self.duel_mut();
        let limit = round.limit;
        let work = round.pairs.get_mut(&side).expect("both pairs present");
        if work.selected.is_some() {
            return Err(RulesError::AlreadySubmitted { player: player.clone() });
        }
        if let Some(attempt) = work.pending() {
            return Err(RulesError::AttemptPending { attempt });
        }
        let words = tokenize(text);
        let prompt = if words.is_empty() {
            work.attempts.last().map(|a| a.prompt.clone()).unwrap_or_default()
        } else {
            match validate_words(&words, limit, &ban) {
                Verdict::Valid => {}
                verdict => return Err(RulesError::Validation(verdict)),
            }
            let mut draft = PromptDraft::default();
            draft.push_words(words, player);
            draft
        };
        let attempt = work
            .budget
            .request_attempt()
            .map_err(|e| RulesError::Attempt { max: e.max })?;
        work.attempts.push(Attempt { prompt: prompt.clone(), image: None });
        work.draft = prompt.clone();
        fx.push(self.request_image(Some(side), attempt, &prompt));
        Ok(())
    }

    fn duel_select(
        &mut self,
        player: &PlayerId,
        attempt: u32,
        at: u64,
        fx: &mut Vec<Effect>,
    ) -> Result<(), RulesError> {
        let side = self.pair_of(player).ok_or(RulesError::NotInPod { player: player.clone() })?;
        let round = self.duel_mut();
        let work = round.pairs.get_mut(&side).expect("both pairs present");
        if work.selected.is_some() {
            return Err(RulesError::AlreadySubmitted { player: player.clone() });
        }
        if let Some(pending) = work.pending() {
            return Err(RulesError::AttemptPending { attempt: pending });
        }
        if work.attempts.get(attempt as usize).and_then(|a| a.image.as_ref()).is_none() {
            return Err(RulesError::UnknownAttempt { attempt });
        }
        work.selected = Some(attempt);
        if round.pairs.values().all(|w| w.selected.is_some()) {
            self.open_peer_vote(at, fx);
        }
        Ok(())
    }

    fn open_peer_vote(&mut self, at: u64, fx: &mut Vec<Effect>) {
        self.phase = Phase::PeerVoting;
        self.set_deadline(at, self.config.vote_seconds, fx);
    }

    /// Closes whatever timed phase is open, filling gaps with defaults.
    fn expire(&mut self, at: u64, fx: &mut Vec<Effect>) {
        match (self.phase, self.kind()) {
            (Phase::PromptComposition, GameKind::DiversityDuel) => self.start_duel_generation(fx),
            (Phase::PromptComposition, GameKind::SecretAgent) => {
                let passes = self.config.passes;
                let round = self.relay_mut();
                let words = std::mem::take(&mut round.pending_words);
                let player = round.active_player(passes).expect("turn in progress").clone();
                round.draft.push_words(words, &player);
                self.next_turn(at, fx);
            }
            (Phase::ImageSelection, _) => {
                for work in self.duel_mut().pairs.values_mut() {
                    if work.selected.is_none() {
                        work.selected = work
                            .attempts
                            .iter()
                            .rposition(|a| a.image.is_some())
                            .map(|i| i as u32);
                    }
                }
                self.open_peer_vote(at, fx);
            }
            (Phase::PeerVoting, _) => self.close_peer_vote(at, fx),
            (Phase::ExternalEvaluation, _) => self.close_evaluation(at, fx),
            (Phase::Accusation, _) => self.close_accusation(fx),
            _ => unreachable!("deadline set outside a timed phase"),
        }
    }

    fn close_peer_vote(&mut self, at: u64, fx: &mut Vec<Effect>) {
        let policy = self.config.image_vote_tie_policy;
        let round = self.duel_mut();
        let tally = count_image_votes(round.votes.values().filter_map(|v| match &v.target {
            VoteTarget::ImageChoice { choice } => Some(choice),
            _ => None,
        }));
        if tally.outcome == ImageVoteOutcome::Tie && policy == TiePolicy::Revote && !round.revoted {
            round.revoted = true;
            round.votes.clear();
            self.set_deadline(at, self.config.vote_seconds, fx);
            return;
        }
        let winner = match tally.outcome {
            ImageVoteOutcome::AWins => Some(Side::A),
            ImageVoteOutcome::BWins => Some(Side::B),
            ImageVoteOutcome::Tie => None,
        };
        let detail = RoundDetail::Duel {
            attempts: round.pairs.iter().map(|(s, w)| (*s, w.attempts.clone())).collect(),
            selected: round.pairs.iter().filter_map(|(s, w)| Some((*s, w.selected?))).collect(),
            tally,
            revoted: round.revoted,
            winner,
        };
        if let Some(side) = winner {
            *self.pair_wins.entry(side).or_default() += 1;
        }
        self.end_round(detail, RoundScore::PairWin { winner }, fx);
    }

    fn close_evaluation(&mut self, at: u64, fx: &mut Vec<Effect>) {
        let round = self.relay_mut();
        let ballots: Vec<Evaluation> = round
            .evaluations
            .values()
            .filter_map(|v| match v.target {
                VoteTarget::Criteria { represents, diverse } => Some(Evaluation { represents, diverse }),
                _ => None,
            })
            .collect();
        round.verdict = Some(evaluate_image(&ballots).unwrap_or_else(|_| empty_verdict()));
        self.phase = Phase::Accusation;
        self.set_deadline(at, self.config.vote_seconds, fx);
    }

    fn close_accusation(&mut self, fx: &mut Vec<Effect>) {
        let agent = self.agent.clone().expect("agent assigned at round setup");
        let rule = self.config.accusation_rule;
        let round = self.relay_mut();
        let tally = count_accusations(
            round.accusations.values().filter_map(|v| match &v.target {
                VoteTarget::Accusation { accused } => Some(accused),
                _ => None,
            }),
            &agent,
            rule,
        );
        let verdict = round.verdict.unwrap_or_else(empty_verdict);
        let outcome = score_agent(verdict.inclusive, tally.detected);
        let detail = RoundDetail::Relay {
            prompt: round.draft.clone(),
            image: round.image().cloned(),
            verdict,
            accusation: tally,
            agent: agent.clone(),
            outcome,
        };
        self.outcomes.push(outcome);
        self.agent_revealed = true;
        fx.push(Effect::RevealAgent { round: self.round_index, agent });
        self.end_round(detail, RoundScore::Agent { outcome }, fx);
    }

    fn end_round(&mut self, detail: RoundDetail, score: RoundScore, fx: &mut Vec<Effect>) {
        self.history.push(RoundSummary {
            round: self.round_index,
            category: self.category_text(),
            detail,
        });
        self.phase = Phase::RoundResult;
        self.deadline = None;
        fx.push(Effect::RecordScore { round: self.round_index, score });
    }

    fn finish(&mut self) {
        self.result = Some(match self.kind() {
            GameKind::DiversityDuel => {
                let best = self.pair_wins.values().copied().max().unwrap_or(0);
                GameOutcome::Duel {
                    wins: self.pair_wins.clone(),
                    winners: self
                        .pair_wins
                        .iter()
                        .filter(|(_, &w)| w == best)
                        .map(|(s, _)| *s)
                        .collect(),
                }
            }
            GameKind::SecretAgent => {
                let p = self.config.points;
                let agent_points = self
                    .outcomes
                    .iter()
                    .map(|o| match o.value {
                        OutcomeValue::FullWin => p.full_win,
                        OutcomeValue::PartialWin => p.partial_win,
                        OutcomeValue::Loss => p.loss,
                    })
                    .sum();
                GameOutcome::Relay { outcomes: self.outcomes.clone(), agent_points }
            }
        });
        self.phase = Phase::GameResult;
        self.deadline = None;
    }
}
