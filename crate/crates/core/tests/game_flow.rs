use biasgames_core::rules::*;
use proptest::prelude::*;

fn pod() -> Vec<PlayerId> {
    (1..=4).map(|i| PlayerId::new(format!("p{i}"))).collect()
}

fn image(attempt: u32, digest: &str) -> ImageRef {
    ImageRef {
        attempt,
        digest: digest.to_string(),
        backend: "test".into(),
        latency_ms: 1,
        pseudo_scores: None,
    }
}

struct Driver {
    state: GameState,
    now: u64,
    log: Vec<GameEvent>,
}

impl Driver {
    fn new(config: GameConfig, seed: u64) -> Self {
        Driver { state: GameState::new(config, pod(), seed).unwrap(), now: 1_000, log: Vec::new() }
    }

    fn try_step(&mut self, kind: EventKind) -> Result<Vec<Effect>, RulesError> {
        let event = GameEvent::new(self.now, kind);
        let (next, effects) = advance(&self.state, &event)?;
        self.state = next;
        self.log.push(event);
        Ok(effects)
    }

    fn step(&mut self, kind: EventKind) -> Vec<Effect> {
        let name = kind.name();
        self.try_step(kind).unwrap_or_else(|e| panic!("{name} rejected: {e}"))
    }

    fn tick(&mut self, seconds: u64) {
        self.now += seconds * 1000;
    }

    fn ready_all(&mut self) {
        for p in pod() {
            self.step(EventKind::PlayerReady { player: p });
        }
    }

    fn deliver_images(&mut self, effects: &[Effect]) -> Vec<Effect> {
        let mut out = Vec::new();
        for effect in effects {
            if let Effect::RequestImage { side, attempt, prompt, .. } = effect {
                out.extend(self.step(EventKind::ImageGenerated {
                    side: *side,
                    image: image(*attempt, &format!("{prompt}#{attempt}")),
                }));
            }
        }
        out
    }
}

fn p(i: usize) -> PlayerId {
    PlayerId::new(format!("p{i}"))
}

#[test]
fn fresh_game_waits_in_lobby() {
    let mut d = Driver::new(GameConfig::diversity_duel(), 1);
    for player in pod().into_iter().take(3) {
        d.step(EventKind::PlayerReady { player });
        assert_eq!(d.state.phase, Phase::Lobby);
    }
    d.step(EventKind::PlayerReady { player: p(4) });
    assert_eq!(d.state.phase, Phase::RoundSetup);
}

#[test]
fn outsiders_are_rejected() {
    let mut d = Driver::new(GameConfig::diversity_duel(), 1);
    let err = d.try_step(EventKind::PlayerReady { player: PlayerId::new("ghost") }).unwrap_err();
    assert!(matches!(err, RulesError::NotInPod { .. }));
}

#[test]
fn diversity_duel_full_game() {
    let mut d = Driver::new(GameConfig::diversity_duel(), 77);
    d.ready_all();
    let mut cards = Vec::new();
    for round in 0..3 {
        let fx = d.step(EventKind::CardDrawn { player: p(1) });
        assert_eq!(d.state.phase, Phase::PromptComposition);
        assert!(fx.iter().any(|e| matches!(e, Effect::StartTimer { deadline } if *deadline == d.now + 45_000)));
        cards.push(d.state.category.clone().unwrap());
        let limit = [6, 5, 4][round];
        assert_eq!(d.state.duel().unwrap().limit, limit);

        let words: Vec<&str> = ["people", "of", "many", "ages", "smiling", "outdoors"][..limit].to_vec();
        d.step(EventKind::WordsSubmitted { player: p(1), text: words.join(" "), submit: true });
        let fx = d.step(EventKind::WordsSubmitted { player: p(3), text: "women".into(), submit: true });
        assert_eq!(d.state.phase, Phase::Generation);
        let requests = fx.iter().filter(|e| matches!(e, Effect::RequestImage { .. })).count();
        assert_eq!(requests, 2);
        d.deliver_images(&fx);
        assert_eq!(d.state.phase, Phase::ImageSelection);

        // Pair B takes its second attempt before choosing.
        let fx = d.step(EventKind::AttemptRequested { player: p(4), text: "older women".into() });
        d.deliver_images(&fx);
        let err = d.try_step(EventKind::AttemptRequested { player: p(3), text: "x".into() });
        assert!(matches!(err, Err(RulesError::Attempt { max: 2 })));

        d.step(EventKind::ImageSelected { player: p(2), attempt: 0 });
        d.step(EventKind::ImageSelected { player: p(3), attempt: 1 });
        assert_eq!(d.state.phase, Phase::PeerVoting);
        for (voter, choice) in [(1, Side::A), (2, Side::A), (3, Side::A), (4, Side::B)] {
            d.step(EventKind::VoteCast { voter: p(voter), choice });
        }
        assert_eq!(d.state.phase, Phase::RoundResult);
        d.step(EventKind::PlayerReady { player: p(2) });
    }
    assert_eq!(d.state.phase, Phase::GameResult);
    assert_eq!(d.state.pair_wins[&Side::A], 3);
    assert_eq!(
        d.state.result,
        Some(GameOutcome::Duel {
            wins: [(Side::A, 3), (Side::B, 0)].into_iter().collect(),
            winners: vec![Side::A]
        })
    );
    cards.sort();
    cards.dedup();
    assert_eq!(cards.len(), 3, "a card never repeats within a game");
}

#[test]
fn composition_deadline_auto_submits_and_falls_back_to_category() {
    let mut d = Driver::new(GameConfig::diversity_duel(), 5);
    d.ready_all();
    d.step(EventKind::CardDrawn { player: p(1) });
    d.step(EventKind::WordsSubmitted { player: p(1), text: "smiling elders".into(), submit: false });
    let early = d.try_step(EventKind::DeadlineExpired);
    assert!(matches!(early, Err(RulesError::DeadlineNotReached { .. })));
    d.tick(45);
    let fx = d.step(EventKind::DeadlineExpired);
    assert_eq!(d.state.phase, Phase::Generation);
    let category = d.state.category.clone().unwrap();
    let prompts: Vec<String> = fx
        .iter()
        .filter_map(|e| match e {
            Effect::RequestImage { prompt, .. } => Some(prompt.clone()),
            _ => None,
        })
        .collect();
    assert_eq!(prompts, vec!["smiling elders".to_string(), category]);
}

#[test]
fn late_action_is_a_deadline_error_and_changes_nothing() {
    let mut d = Driver::new(GameConfig::diversity_duel(), 5);
    d.ready_all();
    d.step(EventKind::CardDrawn { player: p(1) });
    d.tick(46);
    let before = d.state.clone();
    let err = d.try_step(EventKind::WordsSubmitted { player: p(1), text: "hi".into(), submit: true });
    assert!(matches!(err, Err(RulesError::Deadline { .. })));
    assert_eq!(d.state, before);
}

#[test]
fn banned_and_overlong_prompts_rejected() {
    let mut d = Driver::new(GameConfig::diversity_duel(), 5);
    d.ready_all();
    d.step(EventKind::CardDrawn { player: p(1) });
    let err = d.try_step(EventKind::WordsSubmitted { player: p(1), text: "Diverse, teachers".into(), submit: true });
    assert_eq!(err, Err(RulesError::Validation(Verdict::BannedWord("diverse".into()))));
    let err = d.try_step(EventKind::WordsSubmitted { player: p(1), text: "a b c d e f g".into(), submit: true });
    assert_eq!(err, Err(RulesError::Validation(Verdict::TooManyWords(7))));
}

#[test]
fn double_vote_keeps_first() {
    let mut d = Driver::new(GameConfig::diversity_duel(), 9);
    d.ready_all();
    d.step(EventKind::CardDrawn { player: p(1) });
    d.tick(45);
    let fx = d.step(EventKind::DeadlineExpired);
    d.deliver_images(&fx);
    d.tick(30);
    d.step(EventKind::DeadlineExpired);
    assert_eq!(d.state.phase, Phase::PeerVoting);
    d.step(EventKind::VoteCast { voter: p(1), choice: Side::A });
    let err = d.try_step(EventKind::VoteCast { voter: p(1), choice: Side::B });
    assert!(matches!(err, Err(RulesError::Ballot(BallotError::AlreadyVoted { .. }))));
    let round = d.state.duel().unwrap();
    assert_eq!(round.votes[&p(1)].target, VoteTarget::ImageChoice { choice: Side::A });
}

fn to_peer_vote(config: GameConfig) -> Driver {
    let mut d = Driver::new(config, 11);
    d.ready_all();
    d.step(EventKind::CardDrawn { player: p(1) });
    d.tick(45);
    let fx = d.step(EventKind::DeadlineExpired);
    d.deliver_images(&fx);
    d.step(EventKind::ImageSelected { player: p(1), attempt: 0 });
    d.step(EventKind::ImageSelected { player: p(3), attempt: 0 });
    d
}

fn split_vote(d: &mut Driver) {
    for (voter, choice) in [(1, Side::A), (2, Side::A), (3, Side::B), (4, Side::B)] {
        d.step(EventKind::VoteCast { voter: p(voter), choice });
    }
}

#[test]
fn tie_with_draw_policy_awards_nothing() {
    let mut d = to_peer_vote(GameConfig::diversity_duel());
    split_vote(&mut d);
    assert_eq!(d.state.phase, Phase::RoundResult);
    assert_eq!(d.state.pair_wins.values().sum::<u32>(), 0);
}

#[test]
fn tie_with_revote_reopens_once() {
    let config = GameConfig { image_vote_tie_policy: TiePolicy::Revote, ..GameConfig::diversity_duel() };
    let mut d = to_peer_vote(config);
    split_vote(&mut d);
    assert_eq!(d.state.phase, Phase::PeerVoting);
    assert!(d.state.duel().unwrap().revoted);
    split_vote(&mut d);
    assert_eq!(d.state.phase, Phase::RoundResult);
    assert_eq!(d.state.pair_wins.values().sum::<u32>(), 0);
}

#[test]
fn tied_game_shares_the_win() {
    let mut d = Driver::new(GameConfig { rounds: 1, ..GameConfig::diversity_duel() }, 3);
    d.ready_all();
    d.step(EventKind::CardDrawn { player: p(1) });
    d.tick(45);
    let fx = d.step(EventKind::DeadlineExpired);
    d.deliver_images(&fx);
    d.tick(30);
    d.step(EventKind::DeadlineExpired);
    d.tick(60);
    d.step(EventKind::DeadlineExpired);
    d.step(EventKind::PlayerReady { player: p(1) });
    match d.state.result {
        Some(GameOutcome::Duel { winners, .. }) => assert_eq!(winners, vec![Side::A, Side::B]),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn generation_failure_reoffers_same_attempt() {
    let mut d = Driver::new(GameConfig::diversity_duel(), 3);
    d.ready_all();
    d.step(EventKind::CardDrawn { player: p(1) });
    d.tick(45);
    d.step(EventKind::DeadlineExpired);
    let fx = d.step(EventKind::GenerationFailed { side: Some(Side::A), attempt: 0, reason: "timeout".into() });
    assert!(fx.iter().any(|e| matches!(e, Effect::RequestImage { side: Some(Side::A), attempt: 0, .. })));
    let work = &d.state.duel().unwrap().pairs[&Side::A];
    assert_eq!(work.budget.used(), 1);
}

#[test]
fn phase_errors_leave_state_untouched() {
    let mut d = Driver::new(GameConfig::diversity_duel(), 3);
    let before = d.state.clone();
    for kind in [
        EventKind::CardDrawn { player: p(1) },
        EventKind::DeadlineExpired,
        EventKind::VoteCast { voter: p(1), choice: Side::A },
        EventKind::AccusationCast { voter: p(1), accused: p(2) },
    ] {
        assert!(matches!(d.try_step(kind), Err(RulesError::Phase { .. })));
        assert_eq!(d.state, before);
    }
}

fn secret_agent_driver(config: GameConfig, seed: u64) -> Driver {
    let mut d = Driver::new(config, seed);
    d.step(EventKind::EvaluatorsAssigned {
        evaluators: vec![PlayerId::new("e1"), PlayerId::new("e2"), PlayerId::new("e3")],
    });
    d.ready_all();
    d
}

fn play_relay_turns(d: &mut Driver) -> Vec<Effect> {
    let mut last = Vec::new();
    for _ in 0..4 {
        let active = d.state.relay().unwrap().active_player(1).unwrap().clone();
        last = d.step(EventKind::WordsSubmitted { player: active, text: "hard hats".into(), submit: true });
    }
    last
}

#[test]
fn secret_agent_full_game() {
    let mut d = secret_agent_driver(GameConfig::secret_agent(), 21);
    let mut agents = Vec::new();
    for round in 0..2 {
        assert_eq!(d.state.phase, Phase::RoundSetup);
        let agent = d.state.agent.clone().unwrap();
        agents.push(agent.clone());
        d.step(EventKind::CardDrawn { player: p(1) });
        let expected_category = ["construction workers", "tech employees"][round];
        assert_eq!(d.state.category.as_deref(), Some(expected_category));

        // Only the active player may add words.
        let order = d.state.relay().unwrap().turn_order.clone();
        let err = d.try_step(EventKind::WordsSubmitted { player: order[1].clone(), text: "a".into(), submit: true });
        assert!(matches!(err, Err(RulesError::NotYourTurn { .. })));
        let err = d.try_step(EventKind::WordsSubmitted { player: order[0].clone(), text: "a b c".into(), submit: true });
        assert_eq!(err, Err(RulesError::Validation(Verdict::TooManyWords(3))));

        let fx = play_relay_turns(&mut d);
        assert_eq!(d.state.phase, Phase::Generation);
        let prompt = fx
            .iter()
            .find_map(|e| match e {
                Effect::RequestImage { prompt, .. } => Some(prompt.clone()),
                _ => None,
            })
            .unwrap();
        assert_eq!(prompt, format!("{expected_category} hard hats hard hats hard hats hard hats"));
        let draft = &d.state.relay().unwrap().draft;
        assert_eq!(draft.tokens.len(), 8);

        d.deliver_images(&fx);
        assert_eq!(d.state.phase, Phase::ExternalEvaluation);
        for e in ["e1", "e2", "e3"] {
            d.step(EventKind::EvaluationReceived { evaluator: PlayerId::new(e), represents: true, diverse: false });
        }
        assert_eq!(d.state.phase, Phase::Accusation);
        let mut fx = Vec::new();
        for voter in pod() {
            fx = d.step(EventKind::AccusationCast { voter, accused: agent.clone() });
        }
        assert!(fx.contains(&Effect::RevealAgent { round, agent: agent.clone() }));
        assert_eq!(d.state.phase, Phase::RoundResult);
        assert_eq!(d.state.outcomes[round].value, OutcomeValue::PartialWin);
        d.step(EventKind::PlayerReady { player: p(1) });
    }
    assert_eq!(d.state.phase, Phase::GameResult);
    assert_eq!(
        d.state.result,
        Some(GameOutcome::Relay { outcomes: d.state.outcomes.clone(), agent_points: 2 })
    );
}

#[test]
fn relay_turn_expiry_accepts_partial_words() {
    let mut d = secret_agent_driver(GameConfig::secret_agent(), 4);
    d.step(EventKind::CardDrawn { player: p(1) });
    let first = d.state.relay().unwrap().active_player(1).unwrap().clone();
    d.step(EventKind::WordsSubmitted { player: first.clone(), text: "steel".into(), submit: false });
    d.tick(30);
    d.step(EventKind::DeadlineExpired);
    let round = d.state.relay().unwrap();
    assert_eq!(round.turn, 1);
    assert_eq!(round.draft.words(), vec!["steel"]);
    assert_eq!(round.draft.tokens[0].author, first);
    // Silent turn: nothing typed, still advances.
    d.tick(30);
    d.step(EventKind::DeadlineExpired);
    assert_eq!(d.state.relay().unwrap().turn, 2);
}

#[test]
fn evaluation_needs_registered_evaluators() {
    let mut d = secret_agent_driver(GameConfig::secret_agent(), 4);
    d.step(EventKind::CardDrawn { player: p(1) });
    let fx = play_relay_turns(&mut d);
    d.deliver_images(&fx);
    let err = d.try_step(EventKind::EvaluationReceived { evaluator: p(1), represents: true, diverse: true });
    assert!(matches!(err, Err(RulesError::Ballot(BallotError::Ineligible { .. }))));
    // Closing with no ballots fails both criteria.
    d.tick(60);
    d.step(EventKind::DeadlineExpired);
    let verdict = d.state.relay().unwrap().verdict.unwrap();
    assert!(!verdict.inclusive && !verdict.represents);
}

#[test]
fn pod_members_cannot_evaluate_their_own_image() {
    let mut d = Driver::new(GameConfig::secret_agent(), 4);
    let err = d.try_step(EventKind::EvaluatorsAssigned { evaluators: vec![p(2)] });
    assert!(matches!(err, Err(RulesError::Ballot(BallotError::Ineligible { .. }))));
}

#[test]
fn per_game_assignment_keeps_the_agent() {
    let config = GameConfig { agent_reassignment: AgentReassignment::PerGame, ..GameConfig::secret_agent() };
    for seed in 0..20 {
        let mut d = secret_agent_driver(config.clone(), seed);
        let first = d.state.agent.clone();
        d.step(EventKind::CardDrawn { player: p(1) });
        let fx = play_relay_turns(&mut d);
        d.deliver_images(&fx);
        d.tick(60);
        d.step(EventKind::DeadlineExpired);
        d.tick(60);
        d.step(EventKind::DeadlineExpired);
        d.step(EventKind::PlayerReady { player: p(1) });
        assert_eq!(d.state.agent, first);
    }
}

#[test]
fn facilitator_extension() {
    let mut d = Driver::new(GameConfig::diversity_duel(), 1);
    d.ready_all();
    d.step(EventKind::CardDrawn { player: p(1) });
    let deadline = d.state.deadline.unwrap();
    d.tick(40);
    let fx = d.step(EventKind::FacilitatorOverride { action: Override::ExtendDeadline { seconds: 30 } });
    assert_eq!(d.state.deadline, Some(deadline + 30_000));
    assert!(fx.contains(&Effect::StartTimer { deadline: deadline + 30_000 }));
    d.tick(40);
    let err = d.try_step(EventKind::FacilitatorOverride { action: Override::ExtendDeadline { seconds: 30 } });
    assert!(matches!(err, Err(RulesError::Deadline { .. })));
    d.step(EventKind::FacilitatorOverride { action: Override::ForceExpire });
    assert_eq!(d.state.phase, Phase::Generation);
}

#[test]
fn advance_is_deterministic() {
    let d = Driver::new(GameConfig::diversity_duel(), 8);
    let event = GameEvent::new(5, EventKind::PlayerReady { player: p(1) });
    let a = advance(&d.state, &event).unwrap();
    let b = advance(&d.state, &event).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.0.state_hash(), b.0.state_hash());
    assert_eq!(a.0.state_hash().len(), 64);
}

/// Random walk: pick arbitrary events, keep only accepted ones, check invariants,
/// then replay the accepted log from scratch.
fn random_event(choice: u8, actor: usize, toggle: bool, text_ix: usize, state: &GameState) -> EventKind {
    const TEXTS: [&str; 6] = ["", "hard hats", "Diverse people", "a b c d e f g", "smiling", "older women with canes"];
    let player = p(actor % 4 + 1);
    match choice % 12 {
        0 => EventKind::PlayerReady { player },
        1 => EventKind::CardDrawn { player },
        2 => EventKind::WordsSubmitted { player, text: TEXTS[text_ix % TEXTS.len()].into(), submit: toggle },
        3 | 4 => EventKind::DeadlineExpired,
        5 => {
            let side = if state.kind() == GameKind::DiversityDuel {
                Some(if toggle { Side::A } else { Side::B })
            } else {
                None
            };
            EventKind::ImageGenerated { side, image: image((text_ix % 3) as u32, "d") }
        }
        6 => EventKind::AttemptRequested { player, text: TEXTS[text_ix % TEXTS.len()].into() },
        7 => EventKind::ImageSelected { player, attempt: (text_ix % 3) as u32 },
        8 => EventKind::VoteCast { voter: player, choice: if toggle { Side::A } else { Side::B } },
        9 => EventKind::EvaluationReceived { evaluator: PlayerId::new(format!("e{}", actor % 3 + 1)), represents: toggle, diverse: !toggle },
        10 => EventKind::AccusationCast { voter: player, accused: p(text_ix % 4 + 1) },
        _ => EventKind::FacilitatorOverride { action: if toggle { Override::ForceExpire } else { Override::ExtendDeadline { seconds: 5 } } },
    }
}

fn check_invariants(state: &GameState) {
    assert!(state.round_index < state.config.rounds);
    if let Some(round) = state.duel() {
        for work in round.pairs.values() {
            assert!(work.budget.used() <= state.config.max_attempts);
            assert!(work.attempts.len() <= state.config.max_attempts as usize);
            for attempt in &work.attempts {
                assert!(validate_prompt(&attempt.prompt, round.limit, &state.config.ban_list).is_valid());
            }
        }
    }
    if let Some(round) = state.relay() {
        assert!(round.draft.tokens.len() <= state.config.relay_budget());
        assert!(validate_prompt(&round.draft, state.config.relay_budget(), &state.config.ban_list).is_valid());
        assert!(state.agent.is_some());
        let agent = state.agent.as_ref().unwrap();
        assert!(state.seat_of(agent).is_some());
        assert!(!state.evaluators.contains(agent));
    }
    let wins: u32 = state.pair_wins.values().sum();
    assert!(wins as usize <= state.history.len());
    if !matches!(state.phase, Phase::RoundResult | Phase::GameResult) {
        // Scores only move when a round closes.
        assert_eq!(state.history.len(), state.round_index);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn random_walks_hold_invariants_and_replay(
        sa in any::<bool>(),
        seed in any::<u64>(),
        steps in prop::collection::vec((any::<u8>(), 0usize..4, any::<bool>(), 0usize..12, 0u64..40), 1..300),
    ) {
        let config = if sa { GameConfig::secret_agent() } else { GameConfig::diversity_duel() };
        let mut d = Driver::new(config.clone(), seed);
        if sa {
            d.step(EventKind::EvaluatorsAssigned {
                evaluators: vec![PlayerId::new("e1"), PlayerId::new("e2"), PlayerId::new("e3")],
            });
        }
        for (choice, actor, toggle, text_ix, secs) in steps {
            d.tick(secs);
            let kind = random_event(choice, actor, toggle, text_ix, &d.state);
            let before = d.state.clone();
            if d.try_step(kind).is_err() {
                prop_assert_eq!(&d.state, &before);
            }
            check_invariants(&d.state);
        }
        let mut replayed = GameState::new(config, pod(), seed).unwrap();
        for event in &d.log {
            replayed = advance(&replayed, event).unwrap().0;
        }
        prop_assert_eq!(replayed.state_hash(), d.state.state_hash());
    }
}
