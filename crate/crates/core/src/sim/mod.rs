//! Headless games: bot clients drive real sessions over the wire protocol
//! using the stub backend and a virtual clock.

mod bots;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

pub use bots::{BotClient, BotPolicy, Profile};

use crate::imagegen::StubBackend;
use crate::rules::{
    derive_seed, score_agent, ConfigErrors, GameConfig, GameKind, GameState, PlayerId, RoundDetail, Side,
    Verdict, POD_SIZE,
};
use crate::session::{
    Dispatch, JoinRole, ServerMessage, Session, SessionOptions, SessionRegistry,
};
use bots::{Bot, WordPools};

/// Virtual clock origin for simulated sessions.
pub const SIM_EPOCH_MS: u64 = 1_700_000_000_000;
const STEP_MS: u64 = 100;
const MAX_STEPS: usize = 20_000;
/// Tied top accusations split a unit of 12 (divisible by 1..=4).
const SHARE_UNITS: u64 = 12;

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub config: GameConfig,
    pub seed: u64,
    pub games: usize,
    pub profile: Profile,
    /// Evaluator-role bots joining each Secret Agent session.
    pub evaluators: usize,
    /// Render and scan every outbound message for agent-identity leaks.
    pub capture_snapshots: bool,
    pub workers: usize,
}

impl SimOptions {
    pub fn new(config: GameConfig, seed: u64, games: usize, profile: Profile) -> Self {
        SimOptions { config, seed, games, profile, evaluators: 3, capture_snapshots: false, workers: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayRoundStats {
    pub agent_seat: usize,
    pub detected: bool,
    pub outcome: crate::rules::OutcomeValue,
    /// Seats tied for the most accusations.
    pub top_seats: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GameRun {
    pub index: usize,
    pub seed: u64,
    pub log: Vec<u8>,
    pub records: usize,
    pub relay_rounds: Vec<RelayRoundStats>,
    pub duel_winners: Vec<Option<Side>>,
    pub final_cues: Vec<i64>,
    pub violations: Vec<String>,
    pub rejections: usize,
    pub banned_rejections: usize,
    pub messages_checked: usize,
    pub leaks: usize,
}

struct Runner<'a> {
    opts: &'a SimOptions,
    session: Session,
    stub: StubBackend,
    now: u64,
    seq: u64,
    facilitator: PlayerId,
    run: GameRun,
}

impl Runner<'_> {
    fn absorb(&mut self, dispatch: Dispatch, from_bot: bool) {
        let mut queue = vec![dispatch];
        while let Some(d) = queue.pop() {
            for m in &d.messages {
                match &m.message {
                    ServerMessage::Ack { .. } if d.records.is_empty() => {
                        self.run.violations.push("ack without a log record".into());
                    }
                    ServerMessage::Error(body) if from_bot => {
                        self.run.rejections += 1;
                        if matches!(body.verdict, Some(Verdict::BannedWord(_))) {
                            self.run.banned_rejections += 1;
                        }
                    }
                    _ => {}
                }
            }
            if self.opts.capture_snapshots {
                self.scan(&d);
            }
            for job in &d.jobs {
                let r = &job.request;
                let result = self.stub.stub_generate(&r.prompt, r.category.as_deref(), r.seed);
                match self.session.image_completed(job, &result, self.now) {
                    Ok(next) => queue.push(next),
                    Err(e) => self.run.violations.push(format!("image completion rejected: {e}")),
                }
            }
        }
    }

    fn scan(&mut self, dispatch: &Dispatch) {
        let hidden: Vec<PlayerId> = self
            .session
            .games()
            .values()
            .filter(|g| g.kind() == GameKind::SecretAgent && !g.agent_revealed)
            .filter_map(|g| g.agent.clone())
            .collect();
        for out in self.session.deliver(dispatch) {
            if out.to == self.facilitator {
                continue;
            }
            self.run.messages_checked += 1;
            let json = out.message.to_json(0);
            if ServerMessage::parse(&json).ok().map(|(_, m)| m).as_ref() != Some(&out.message) {
                self.run.violations.push(format!("{} message does not survive a parse", out.message.kind()));
            }
            for agent in &hidden {
                if *agent != out.to && json.contains(agent.as_str()) {
                    self.run.leaks += 1;
                }
            }
        }
    }

    fn join(&mut self, name: &str, role: JoinRole, token: Option<&str>) -> PlayerId {
        let (id, dispatch) = self.session.join(name, role, token, self.now).expect("simulated joins succeed");
        self.absorb(dispatch, false);
        id
    }
}

fn run_game(opts: &SimOptions, index: usize) -> GameRun {
    let game_seed = derive_seed(opts.seed, "game", index as u64);
    let created = SessionRegistry::new(game_seed).reserve();
    let options = SessionOptions { pods: 1, facilitator_token: created.facilitator_token.clone(), seed: created.seed };
    let session = Session::create(created.code.clone(), opts.config.clone(), options, SIM_EPOCH_MS)
        .expect("config validated before simulation");
    let stub = StubBackend::default();
    let pools = WordPools::new(stub.lexicon(), &opts.config.ban_list);
    let lexicon = stub.lexicon().clone();
    let mut runner = Runner {
        opts,
        session,
        stub,
        now: SIM_EPOCH_MS,
        seq: 0,
        facilitator: PlayerId::new(""),
        run: GameRun {
            index,
            seed: game_seed,
            log: Vec::new(),
            records: 0,
            relay_rounds: Vec::new(),
            duel_winners: Vec::new(),
            final_cues: Vec::new(),
            violations: Vec::new(),
            rejections: 0,
            banned_rejections: 0,
            messages_checked: 0,
            leaks: 0,
        },
    };
    runner.facilitator = runner.join("Facilitator", JoinRole::Facilitator, Some(&created.facilitator_token));

    let profile = &opts.profile;
    let bot_rng = |i: usize| rand::SeedableRng::seed_from_u64(derive_seed(game_seed, "bot", i as u64));
    let mut bots: Vec<(PlayerId, Bot)> = Vec::new();
    for i in 0..POD_SIZE {
        let id = runner.join(&format!("Player {}", i + 1), JoinRole::Regular, None);
        bots.push((id, Bot { policy: profile.players, policy_if_agent: profile.agent, rng: bot_rng(i) }));
    }
    if opts.config.kind == GameKind::SecretAgent {
        for k in 0..opts.evaluators {
            let id = runner.join(&format!("Evaluator {}", k + 1), JoinRole::Evaluator, None);
            let policy = profile.evaluators;
            bots.push((id, Bot { policy, policy_if_agent: policy, rng: bot_rng(POD_SIZE + k) }));
        }
    }

    let mut steps = 0;
    while !runner.session.is_finished() {
        steps += 1;
        if steps > MAX_STEPS {
            runner.run.violations.push(format!("no result after {MAX_STEPS} steps"));
            break;
        }
        runner.now += STEP_MS;
        let mut acted = false;
        for (id, bot) in bots.iter_mut() {
            let snapshot = runner.session.snapshot(id).expect("bots are participants");
            if let Some(message) = bot.act(&snapshot, &pools, &lexicon, profile) {
                runner.seq += 1;
                let raw = message.to_json(runner.seq);
                let dispatch = runner.session.handle_message(id, &raw, runner.now);
                runner.absorb(dispatch, true);
                acted = true;
            }
        }
        if !acted {
            match runner.session.next_deadline() {
                Some(deadline) => {
                    runner.now = runner.now.max(deadline);
                    let dispatch = runner.session.expire_due(runner.now);
                    runner.absorb(dispatch, false);
                }
                None => {
                    runner.run.violations.push(format!("stalled at step {steps}"));
                    break;
                }
            }
        }
    }
    finish_run(runner, &lexicon)
}

fn finish_run(runner: Runner<'_>, lexicon: &crate::imagegen::Lexicon) -> GameRun {
    let Runner { session, mut run, opts, .. } = runner;
    run.log = session.export_log();
    run.records = session.records().len();
    match Session::replay(session.records()) {
        Ok(replayed) if replayed.export_log() == run.log => {}
        Ok(_) => run.violations.push("replayed log differs".into()),
        Err(e) => run.violations.push(format!("replay failed: {e}")),
    }
    for game in session.games().values() {
        record_history(game, lexicon, &mut run);
        if game.history.len() != opts.config.rounds {
            run.violations.push(format!("{} of {} rounds recorded", game.history.len(), opts.config.rounds));
        }
    }
    run
}

/// Folds a game's finished rounds into `run`: outcomes, accusations, winners and final-prompt cues.
pub fn record_history(game: &GameState, lexicon: &crate::imagegen::Lexicon, run: &mut GameRun) {
    for summary in &game.history {
        match &summary.detail {
            RoundDetail::Relay { prompt, verdict, accusation, agent, outcome, .. } => {
                if score_agent(verdict.inclusive, accusation.detected) != *outcome {
                    run.violations.push(format!("round {} outcome disagrees with score table", summary.round));
                }
                let seat_of = |p: &PlayerId| game.seat_of(p).map_or(0, |s| s + 1);
                let top = accusation.counts.values().copied().max().unwrap_or(0);
                run.relay_rounds.push(RelayRoundStats {
                    agent_seat: seat_of(agent),
                    detected: accusation.detected,
                    outcome: outcome.value,
                    top_seats: accusation
                        .counts
                        .iter()
                        .filter(|(_, n)| top > 0 && **n == top)
                        .map(|(p, _)| seat_of(p))
                        .collect(),
                });
                run.final_cues.push(lexicon.score(&prompt.prompt_text(), Some(&summary.category)).diversity_cue);
            }
            RoundDetail::Duel { attempts, selected, winner, .. } => {
                run.duel_winners.push(*winner);
                for (side, i) in selected {
                    if let Some(a) = attempts.get(side).and_then(|l| l.get(*i as usize)) {
                        run.final_cues.push(lexicon.score(&a.prompt.prompt_text(), Some(&summary.category)).diversity_cue);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub game: GameKind,
    pub profile: String,
    pub seed: u64,
    pub games: usize,
    pub records: usize,
    pub agent_rounds: usize,
    pub full_win: usize,
    pub partial_win: usize,
    pub loss: usize,
    pub detected: usize,
    /// Accused-top share per seat in twelfths of a round.
    pub accused_top_units: [u64; POD_SIZE],
    pub duel_rounds: usize,
    pub duel_a: usize,
    pub duel_b: usize,
    pub duel_draws: usize,
    pub cue_sum: i64,
    pub cue_count: usize,
    pub violations: Vec<String>,
    pub rejections: usize,
    pub banned_rejections: usize,
    pub messages_checked: usize,
    pub leaks: usize,
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

impl SimSummary {
    pub fn full_win_rate(&self) -> f64 {
        ratio(self.full_win, self.agent_rounds)
    }
    pub fn partial_win_rate(&self) -> f64 {
        ratio(self.partial_win, self.agent_rounds)
    }
    pub fn loss_rate(&self) -> f64 {
        ratio(self.loss, self.agent_rounds)
    }
    pub fn detection_rate(&self) -> f64 {
        ratio(self.detected, self.agent_rounds)
    }
    pub fn mean_diversity_cue(&self) -> f64 {
        if self.cue_count == 0 {
            0.0
        } else {
            self.cue_sum as f64 / self.cue_count as f64
        }
    }
    pub fn accused_top_shares(&self) -> [f64; POD_SIZE] {
        let total: u64 = self.accused_top_units.iter().sum();
        self.accused_top_units.map(|u| if total == 0 { 0.0 } else { u as f64 / total as f64 })
    }

    /// Order-independent reduction over finished runs.
    pub fn aggregate(game: GameKind, profile: &str, seed: u64, runs: &[GameRun]) -> SimSummary {
        let mut s = SimSummary {
            game,
            profile: profile.into(),
            seed,
            games: runs.len(),
            records: 0,
            agent_rounds: 0,
            full_win: 0,
            partial_win: 0,
            loss: 0,
            detected: 0,
            accused_top_units: [0; POD_SIZE],
            duel_rounds: 0,
            duel_a: 0,
            duel_b: 0,
            duel_draws: 0,
            cue_sum: 0,
            cue_count: 0,
            violations: Vec::new(),
            rejections: 0,
            banned_rejections: 0,
            messages_checked: 0,
            leaks: 0,
        };
        let mut ordered: Vec<&GameRun> = runs.iter().collect();
        ordered.sort_by_key(|r| r.index);
        for run in ordered {
            s.records += run.records;
            for r in &run.relay_rounds {
                s.agent_rounds += 1;
                match r.outcome {
                    crate::rules::OutcomeValue::FullWin => s.full_win += 1,
                    crate::rules::OutcomeValue::PartialWin => s.partial_win += 1,
                    crate::rules::OutcomeValue::Loss => s.loss += 1,
                }
                s.detected += r.detected as usize;
                if !r.top_seats.is_empty() {
                    let share = SHARE_UNITS / r.top_seats.len() as u64;
                    for seat in &r.top_seats {
                        s.accused_top_units[seat - 1] += share;
                    }
                }
            }
            for w in &run.duel_winners {
                s.duel_rounds += 1;
                match w {
                    Some(Side::A) => s.duel_a += 1,
                    Some(Side::B) => s.duel_b += 1,
                    None => s.duel_draws += 1,
                }
            }
            s.cue_sum += run.final_cues.iter().sum::<i64>();
            s.cue_count += run.final_cues.len();
            s.violations.extend(run.violations.iter().map(|v| format!("game {}: {v}", run.index)));
            s.rejections += run.rejections;
            s.banned_rejections += run.banned_rejections;
            s.messages_checked += run.messages_checked;
            s.leaks += run.leaks;
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut t = String::new();
        let _ = writeln!(t, "game            {}", self.game.as_str());
        let _ = writeln!(t, "profile         {}", self.profile);
        let _ = writeln!(t, "seed            {}", self.seed);
        let _ = writeln!(t, "games           {}", self.games);
        let _ = writeln!(t, "log records     {}", self.records);
        match self.game {
            GameKind::SecretAgent => {
                let _ = writeln!(t, "agent rounds    {}", self.agent_rounds);
                let _ = writeln!(t, "full win        {:.3}", self.full_win_rate());
                let _ = writeln!(t, "partial win     {:.3}", self.partial_win_rate());
                let _ = writeln!(t, "loss            {:.3}", self.loss_rate());
                let _ = writeln!(t, "detection rate  {:.3}", self.detection_rate());
                let shares = self.accused_top_shares();
                let _ = writeln!(
                    t,
                    "accused top     {}",
                    shares.iter().enumerate().map(|(i, s)| format!("seat{}={s:.3}", i + 1)).collect::<Vec<_>>().join(" ")
                );
            }
            GameKind::DiversityDuel => {
                let _ = writeln!(t, "duel rounds     {}", self.duel_rounds);
                let _ = writeln!(t, "pair A wins     {}", self.duel_a);
                let _ = writeln!(t, "pair B wins     {}", self.duel_b);
                let _ = writeln!(t, "draws           {}", self.duel_draws);
            }
        }
        let _ = writeln!(t, "mean cue        {:.3}", self.mean_diversity_cue());
        let _ = writeln!(t, "rejections      {} ({} banned word)", self.rejections, self.banned_rejections);
        let _ = writeln!(t, "violations      {}", self.violations.len());
        for v in self.violations.iter().take(10) {
            let _ = writeln!(t, "  {v}");
        }
        t
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = crate::csv_writer(Vec::new());
        let shares = self.accused_top_shares();
        let mut rows: Vec<(String, String)> = vec![
            ("game".into(), self.game.as_str().into()),
            ("profile".into(), self.profile.clone()),
            ("seed".into(), self.seed.to_string()),
            ("games".into(), self.games.to_string()),
            ("records".into(), self.records.to_string()),
            ("agent_rounds".into(), self.agent_rounds.to_string()),
            ("full_win_rate".into(), format!("{:.6}", self.full_win_rate())),
            ("partial_win_rate".into(), format!("{:.6}", self.partial_win_rate())),
            ("loss_rate".into(), format!("{:.6}", self.loss_rate())),
            ("detection_rate".into(), format!("{:.6}", self.detection_rate())),
            ("duel_a".into(), self.duel_a.to_string()),
            ("duel_b".into(), self.duel_b.to_string()),
            ("duel_draws".into(), self.duel_draws.to_string()),
            ("mean_diversity_cue".into(), format!("{:.6}", self.mean_diversity_cue())),
            ("rejections".into(), self.rejections.to_string()),
            ("banned_rejections".into(), self.banned_rejections.to_string()),
            ("violations".into(), self.violations.len().to_string()),
        ];
        for (i, s) in shares.iter().enumerate() {
            rows.push((format!("accused_top_seat{}", i + 1), format!("{s:.6}")));
        }
        w.write_record(["metric", "value"]).expect("in-memory csv");
        for (k, v) in rows {
            w.write_record([k, v]).expect("in-memory csv");
        }
        w.into_inner().expect("in-memory csv")
    }
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub summary: SimSummary,
    pub runs: Vec<GameRun>,
}

/// Replays a single game of a simulation.
pub fn simulate_one(opts: &SimOptions, index: usize) -> GameRun {
    run_game(opts, index)
}

pub fn simulate(opts: &SimOptions) -> Result<SimResult, ConfigErrors> {
    opts.config.validate()?;
    let workers = opts.workers.clamp(1, opts.games.max(1));
    let mut runs: Vec<GameRun> = if workers == 1 {
        (0..opts.games).map(|i| run_game(opts, i)).collect()
    } else {
        let mut by_worker: BTreeMap<usize, Vec<GameRun>> = BTreeMap::new();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| scope.spawn(move || (w..opts.games).step_by(workers).map(|i| run_game(opts, i)).collect::<Vec<_>>()))
                .collect();
            for (w, h) in handles.into_iter().enumerate() {
                by_worker.insert(w, h.join().expect("simulation worker panicked"));
            }
        });
        by_worker.into_values().flatten().collect()
    };
    runs.sort_by_key(|r| r.index);
    let summary = SimSummary::aggregate(opts.config.kind, &opts.profile.name, opts.seed, &runs);
    Ok(SimResult { summary, runs })
}
