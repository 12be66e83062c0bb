//! Role-redacted snapshots. Players are referred to by seat, never by id,
//! so a viewer only ever sees their own id.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{JoinRole, PodId, Session};
use crate::rules::{
    GameKind, GameOutcome, GameState, OutcomeValue, Phase, PlayerId, PromptDraft, PseudoScores,
    RoundDetail, RoundState, RoundSummary, Side, POD_SIZE,
};
use crate::study::{discussion_prompts, Stage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberView {
    pub seat: usize,
    pub name: String,
    pub pair: Option<Side>,
    pub ready: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordView {
    pub word: String,
    /// Hidden (None) while authorship is secret.
    pub seat: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftView {
    pub pair: Option<Side>,
    pub prefix: Option<String>,
    pub words: Vec<WordView>,
    pub submitted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptView {
    pub pair: Option<Side>,
    pub attempt: u32,
    pub prompt: String,
    pub digest: Option<String>,
    pub pseudo_scores: Option<PseudoScores>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallotKind {
    ImageVote,
    Evaluation,
    Accusation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BallotView {
    pub kind: BallotKind,
    pub open: bool,
    pub cast: usize,
    pub eligible: usize,
    pub you_voted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "game", rename_all = "snake_case")]
pub enum RoundView {
    Duel {
        round: usize,
        category: String,
        prompts: BTreeMap<Side, String>,
        selected: BTreeMap<Side, String>,
        votes_a: u32,
        votes_b: u32,
        revoted: bool,
        winner: Option<Side>,
    },
    Relay {
        round: usize,
        category: String,
        prompt: String,
        authorship: String,
        digest: Option<String>,
        represents_yes: u32,
        represents_no: u32,
        diverse_yes: u32,
        diverse_no: u32,
        inclusive: bool,
        /// Accusations received per seat.
        #[serde(with = "seat_keys")]
        accusations: BTreeMap<usize, u32>,
        accused_seat: Option<usize>,
        agent_seat: usize,
        detected: bool,
        outcome: OutcomeValue,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "game", rename_all = "snake_case")]
pub enum ResultView {
    Duel { wins_a: u32, wins_b: u32, winners: Vec<Side> },
    Relay { outcomes: Vec<OutcomeValue>, agent_points: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PodView {
    pub pod: PodId,
    pub phase: Phase,
    pub round: usize,
    pub rounds: usize,
    pub category: Option<String>,
    pub word_limit: Option<usize>,
    pub words_per_turn: Option<usize>,
    pub ban_list: Vec<String>,
    /// Absolute server time in milliseconds.
    pub deadline: Option<u64>,
    pub your_seat: Option<usize>,
    pub members: Vec<MemberView>,
    pub active_seat: Option<usize>,
    pub drafts: Vec<DraftView>,
    pub attempts: Vec<AttemptView>,
    pub attempts_left: Option<u32>,
    /// Chosen attempt per pair once selection closes.
    pub selected: BTreeMap<Side, u32>,
    pub ballot: Option<BallotView>,
    pub agent_seat: Option<usize>,
    pub results: Vec<RoundView>,
    pub outcome: Option<ResultView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationTask {
    pub pod: PodId,
    pub round: usize,
    pub category: String,
    pub prompt: String,
    pub digest: Option<String>,
    pub pseudo_scores: Option<PseudoScores>,
    pub deadline: Option<u64>,
    pub you_voted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantView {
    pub player: PlayerId,
    pub name: String,
    pub role: JoinRole,
    pub pod: Option<PodId>,
    pub seat: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacilitatorPod {
    pub view: PodView,
    pub agent: Option<PlayerId>,
    pub agent_seat: Option<usize>,
    pub evaluators: Vec<PlayerId>,
    /// Live per-choice counts: "A"/"B", "represents"/"diverse" yes counts, or seats.
    pub live_tally: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacilitatorView {
    pub participants: Vec<ParticipantView>,
    pub pods: Vec<FacilitatorPod>,
    pub responses: BTreeMap<Stage, usize>,
    pub discussion_prompts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub session: String,
    pub viewer: PlayerId,
    pub name: String,
    pub role: JoinRole,
    pub game: GameKind,
    pub you_are_agent: bool,
    pub pod: Option<PodView>,
    /// Seated but the pod is not full yet.
    pub lobby: Option<LobbyView>,
    pub evaluations: Vec<EvaluationTask>,
    pub questionnaires_done: Vec<Stage>,
    pub facilitator: Option<FacilitatorView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LobbyView {
    pub pod: PodId,
    pub your_seat: usize,
    /// Names in seat order.
    pub names: Vec<String>,
    pub needed: usize,
}

/// JSON object keys are strings; parse them back into seat numbers.
mod seat_keys {
    use std::collections::BTreeMap;

    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<usize, u32>, s: S) -> Result<S::Ok, S::Error> {
        map.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, u32>, D::Error> {
        BTreeMap::<String, u32>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| k.parse().map(|k| (k, v)).map_err(D::Error::custom))
            .collect()
    }
}

fn seat(game: &GameState, player: &PlayerId) -> Option<usize> {
    game.seat_of(player).map(|s| s + 1)
}

fn draft_view(
    game: &GameState,
    draft: &PromptDraft,
    pair: Option<Side>,
    submitted: bool,
    show_authors: bool,
) -> DraftView {
    DraftView {
        pair,
        prefix: draft.category_prefix.clone(),
        words: draft
            .tokens
            .iter()
            .map(|t| WordView {
                word: t.word.clone(),
                seat: if show_authors { seat(game, &t.author) } else { None },
            })
            .collect(),
        submitted,
    }
}

fn round_view(game: &GameState, summary: &RoundSummary) -> RoundView {
    let seat_of = |p: &PlayerId| game.seat_of(p).map(|s| s + 1);
    match &summary.detail {
        RoundDetail::Duel { attempts, selected, tally, revoted, winner } => RoundView::Duel {
            round: summary.round,
            category: summary.category.clone(),
            prompts: selected
                .iter()
                .filter_map(|(s, i)| Some((*s, attempts.get(s)?.get(*i as usize)?.prompt.prompt_text())))
                .collect(),
            selected: selected
                .iter()
                .filter_map(|(s, i)| {
                    Some((*s, attempts.get(s)?.get(*i as usize)?.image.as_ref()?.digest.clone()))
                })
                .collect(),
            votes_a: tally.a,
            votes_b: tally.b,
            revoted: *revoted,
            winner: *winner,
        },
        RoundDetail::Relay { prompt, image, verdict, accusation, agent, outcome } => RoundView::Relay {
            round: summary.round,
            category: summary.category.clone(),
            prompt: prompt.prompt_text(),
            authorship: prompt.authorship(|p| game.seat_of(p)),
            digest: image.as_ref().map(|i| i.digest.clone()),
            represents_yes: verdict.represents_votes.yes,
            represents_no: verdict.represents_votes.no,
            diverse_yes: verdict.diverse_votes.yes,
            diverse_no: verdict.diverse_votes.no,
            inclusive: verdict.inclusive,
            accusations: accusation
                .counts
                .iter()
                .filter_map(|(p, n)| Some((seat_of(p)?, *n)))
                .collect(),
            accused_seat: accusation.verdict.as_ref().and_then(seat_of),
            agent_seat: seat_of(agent).unwrap_or(0),
            detected: accusation.detected,
            outcome: outcome.value,
        },
    }
}

fn result_view(game: &GameState) -> Option<ResultView> {
    game.result.as_ref().map(|r| match r {
        GameOutcome::Duel { wins, winners } => ResultView::Duel {
            wins_a: wins.get(&Side::A).copied().unwrap_or(0),
            wins_b: wins.get(&Side::B).copied().unwrap_or(0),
            winners: winners.clone(),
        },
        GameOutcome::Relay { outcomes, agent_points } => ResultView::Relay {
            outcomes: outcomes.iter().map(|o| o.value).collect(),
            agent_points: *agent_points,
        },
    })
}

pub(crate) fn round_result(game: &GameState, round: usize) -> Option<RoundView> {
    game.history.iter().find(|s| s.round == round).map(|s| round_view(game, s))
}

pub(crate) fn game_result(game: &GameState) -> Option<ResultView> {
    result_view(game)
}

/// `viewer` is None for the facilitator's privileged view.
fn pod_view(pod: PodId, game: &GameState, viewer: Option<&PlayerId>) -> PodView {
    let privileged = viewer.is_none();
    let your_seat = viewer.and_then(|v| seat(game, v));
    let your_pair = viewer.and_then(|v| game.pair_of(v));
    let config = &game.config;
    let composing = game.phase == Phase::PromptComposition;

    let mut drafts = Vec::new();
    let mut attempts = Vec::new();
    let mut attempts_left = None;
    let mut selected = BTreeMap::new();
    let mut ballot = None;
    let mut active_seat = None;
    let mut word_limit = None;
    let mut words_per_turn = None;

    match &game.round {
        RoundState::Idle => {}
        RoundState::Duel(d) => {
            word_limit = Some(d.limit);
            for (side, work) in &d.pairs {
                let own = your_pair == Some(*side);
                if privileged || own || !composing {
                    drafts.push(draft_view(game, &work.draft, Some(*side), work.submitted, true));
                }
                for (i, a) in work.attempts.iter().enumerate() {
                    attempts.push(AttemptView {
                        pair: Some(*side),
                        attempt: i as u32,
                        prompt: a.prompt.prompt_text(),
                        digest: a.image.as_ref().map(|img| img.digest.clone()),
                        pseudo_scores: a.image.as_ref().and_then(|img| img.pseudo_scores),
                    });
                }
                if own {
                    attempts_left = Some(work.budget.remaining());
                }
                if let Some(i) = work.selected.filter(|_| privileged || own || game.phase != Phase::ImageSelection) {
                    selected.insert(*side, i);
                }
            }
            if game.phase == Phase::PeerVoting {
                ballot = Some(BallotView {
                    kind: BallotKind::ImageVote,
                    open: true,
                    cast: d.votes.len(),
                    eligible: game.roster.len(),
                    you_voted: viewer.is_some_and(|v| d.votes.contains_key(v)),
                });
            }
        }
        RoundState::Relay(r) => {
            words_per_turn = Some(config.words_per_turn);
            let reveal_authors = privileged
                || matches!(game.phase, Phase::Accusation | Phase::RoundResult | Phase::GameResult);
            drafts.push(draft_view(game, &r.draft, None, !composing, reveal_authors));
            active_seat = r.active_player(config.passes).and_then(|p| seat(game, p)).filter(|_| composing);
            for (i, a) in r.attempts.iter().enumerate() {
                attempts.push(AttemptView {
                    pair: None,
                    attempt: i as u32,
                    prompt: a.prompt.prompt_text(),
                    digest: a.image.as_ref().map(|img| img.digest.clone()),
                    pseudo_scores: a.image.as_ref().and_then(|img| img.pseudo_scores),
                });
            }
            ballot = match game.phase {
                Phase::ExternalEvaluation => Some(BallotView {
                    kind: BallotKind::Evaluation,
                    open: true,
                    cast: r.evaluations.len(),
                    eligible: game.evaluators.len(),
                    you_voted: viewer.is_some_and(|v| r.evaluations.contains_key(v)),
                }),
                Phase::Accusation => Some(BallotView {
                    kind: BallotKind::Accusation,
                    open: true,
                    cast: r.accusations.len(),
                    eligible: game.roster.len(),
                    you_voted: viewer.is_some_and(|v| r.accusations.contains_key(v)),
                }),
                _ => None,
            };
        }
    }

    let agent_seat = game
        .agent
        .as_ref()
        .filter(|_| privileged || game.agent_revealed)
        .and_then(|a| seat(game, a));

    PodView {
        pod,
        phase: game.phase,
        round: game.round_index,
        rounds: config.rounds,
        category: game.category.clone(),
        word_limit,
        words_per_turn,
        ban_list: config.ban_list.iter().map(String::from).collect(),
        deadline: game.deadline,
        your_seat,
        members: game
            .roster
            .iter()
            .enumerate()
            .map(|(i, s)| MemberView { seat: i + 1, name: String::new(), pair: s.pair, ready: game.ready.contains(&s.player) })
            .collect(),
        active_seat,
        drafts,
        attempts,
        attempts_left,
        selected,
        ballot,
        agent_seat,
        results: game.history.iter().map(|s| round_view(game, s)).collect(),
        outcome: result_view(game),
    }
}

fn live_tally(game: &GameState) -> BTreeMap<String, u32> {
    let mut out = BTreeMap::new();
    match &game.round {
        RoundState::Idle => {}
        RoundState::Duel(d) => {
            for v in d.votes.values() {
                if let crate::rules::VoteTarget::ImageChoice { choice } = v.target {
                    *out.entry(format!("{choice:?}")).or_default() += 1;
                }
            }
        }
        RoundState::Relay(r) => {
            for v in r.evaluations.values() {
                if let crate::rules::VoteTarget::Criteria { represents, diverse } = v.target {
                    *out.entry("represents".into()).or_default() += represents as u32;
                    *out.entry("diverse".into()).or_default() += diverse as u32;
                }
            }
            for v in r.accusations.values() {
                if let crate::rules::VoteTarget::Accusation { accused } = &v.target {
                    if let Some(s) = seat(game, accused) {
                        *out.entry(format!("seat {s}")).or_default() += 1;
                    }
                }
            }
        }
    }
    out
}

impl Session {
    fn named_pod_view(&self, pod: PodId, game: &GameState, viewer: Option<&PlayerId>) -> PodView {
        let mut view = pod_view(pod, game, viewer);
        for (member, seat) in view.members.iter_mut().zip(&game.roster) {
            member.name = self.participants.get(&seat.player).map(|p| p.name.clone()).unwrap_or_default();
        }
        view
    }

    pub(super) fn build_snapshot(&self, viewer: &PlayerId) -> Option<Snapshot> {
        let me = self.participants.get(viewer)?;
        let game = me.pod.and_then(|p| self.games.get(&p).map(|g| (p, g)));
        let you_are_agent = game.is_some_and(|(_, g)| g.agent.as_ref() == Some(viewer));

        let mut evaluations = Vec::new();
        for (pod, g) in &self.games {
            if g.phase != Phase::ExternalEvaluation || !g.evaluators.contains(viewer) {
                continue;
            }
            if let Some(r) = g.relay() {
                evaluations.push(EvaluationTask {
                    pod: *pod,
                    round: g.round_index,
                    category: g.category.clone().unwrap_or_default(),
                    prompt: r.draft.prompt_text(),
                    digest: r.image().map(|i| i.digest.clone()),
                    pseudo_scores: r.image().and_then(|i| i.pseudo_scores),
                    deadline: g.deadline,
                    you_voted: r.evaluations.contains_key(viewer),
                });
            }
        }

        let facilitator = (me.role == JoinRole::Facilitator).then(|| {
            let mut responses = BTreeMap::new();
            for r in &self.responses {
                *responses.entry(r.stage).or_default() += 1;
            }
            FacilitatorView {
                participants: self
                    .participants
                    .values()
                    .map(|p| ParticipantView {
                        player: p.id.clone(),
                        name: p.name.clone(),
                        role: p.role,
                        pod: p.pod,
                        seat: p.seat.map(|s| s + 1),
                    })
                    .collect(),
                pods: self
                    .games
                    .iter()
                    .map(|(pod, g)| FacilitatorPod {
                        view: self.named_pod_view(*pod, g, None),
                        agent: g.agent.clone(),
                        agent_seat: g.agent.as_ref().and_then(|a| seat(g, a)),
                        evaluators: g.evaluators.clone(),
                        live_tally: live_tally(g),
                    })
                    .collect(),
                responses,
                discussion_prompts: discussion_prompts(self.config.kind).into_iter().map(String::from).collect(),
            }
        });

        Some(Snapshot {
            session: self.code.clone(),
            viewer: viewer.clone(),
            name: me.name.clone(),
            role: me.role,
            game: self.config.kind,
            you_are_agent,
            pod: game.map(|(p, g)| self.named_pod_view(p, g, Some(viewer))),
            lobby: match (game, me.pod, me.seat) {
                (None, Some(pod), Some(seat)) => {
                    let names: Vec<String> = self.pods[pod as usize]
                        .iter()
                        .filter_map(|id| self.participants.get(id).map(|p| p.name.clone()))
                        .collect();
                    Some(LobbyView { pod, your_seat: seat + 1, needed: POD_SIZE - names.len(), names })
                }
                _ => None,
            },
            evaluations,
            questionnaires_done: self
                .responses
                .iter()
                .filter(|r| &r.participant == viewer)
                .map(|r| r.stage)
                .collect(),
            facilitator,
        })
    }
}
