//! Lobbies, role-aware snapshots, server-stamped deadlines and the
//! append-only event log. A `Session` is a synchronous single owner: hosts
//! pass the current server time into every call and serialize access.

mod log;
mod protocol;
mod registry;
mod view;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::imagegen::{ImageRequest, ImageResult};
use crate::rules::{
    advance, derive_seed, ConfigErrors, Effect, EventKind, FieldError, GameConfig, GameEvent,
    GameKind, GameState, Override, Phase, PlayerId, RulesError, Side, POD_SIZE,
};
use crate::study::{validate_response, Answer, Response, Stage, StudyError};

pub use log::{parse_log, write_jsonl, EventRecord, LogEvent, LogParseError, LogSink, SYSTEM_ACTOR};
pub use protocol::{ClientMessage, Envelope, ErrorBody, JoinRequest, ProtocolError, ServerMessage, PROTOCOL_VERSION};
pub use registry::{generate_code, is_room_code, Created, SessionRegistry, CODE_ALPHABET, CODE_LEN};
pub use view::{
    AttemptView, BallotKind, BallotView, DraftView, EvaluationTask, FacilitatorPod, FacilitatorView,
    LobbyView, MemberView, ParticipantView, PodView, ResultView, RoundView, Snapshot, WordView,
};

pub type PodId = u32;

const MAX_NAME_CHARS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinRole {
    #[default]
    Regular,
    Evaluator,
    Facilitator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub id: PlayerId,
    pub name: String,
    pub role: JoinRole,
    pub pod: Option<PodId>,
    /// 0-based seat within the pod.
    pub seat: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionOptions {
    pub pods: usize,
    pub facilitator_token: String,
    pub seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("no session with code {0}")]
    NotFound(String),
    #[error("unknown participant {0}")]
    UnknownPlayer(PlayerId),
    #[error("session is full")]
    Full,
    #[error("facilitator token required")]
    Unauthorized,
    #[error("display name must be 1 to {MAX_NAME_CHARS} characters")]
    InvalidName,
    #[error("{0} is not seated in a playing pod")]
    NoPod(PlayerId),
    #[error("pod {0} has no game yet")]
    NoGame(PodId),
    #[error("seat {0} does not exist")]
    NoSeat(usize),
    #[error("no open evaluation for this participant")]
    NoEvaluation,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Rules(#[from] RulesError),
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error("invalid config: {0}")]
    Config(#[from] ConfigErrors),
    #[error("log write to {path} failed: {source}")]
    Io { path: String, source: std::io::Error },
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::NotFound(_) | SessionError::UnknownPlayer(_) => "not_found",
            SessionError::Full => "full",
            SessionError::Unauthorized => "unauthorized",
            SessionError::InvalidName | SessionError::Protocol(_) => "protocol",
            SessionError::NoPod(_) | SessionError::NoGame(_) => "not_in_pod",
            SessionError::NoSeat(_) => "ballot",
            SessionError::NoEvaluation => "phase",
            SessionError::Rules(e) => e.code(),
            SessionError::Study(_) => "data",
            SessionError::Config(_) => "config",
            SessionError::Io { .. } => "internal",
        }
    }

    pub fn to_body(&self, reply_to: Option<u64>) -> ErrorBody {
        let verdict = match self {
            SessionError::Rules(RulesError::Validation(v)) => Some(v.clone()),
            _ => None,
        };
        ErrorBody { code: self.code().into(), detail: self.to_string(), verdict, reply_to }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub to: PlayerId,
    pub message: ServerMessage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageJob {
    pub pod: PodId,
    pub side: Option<Side>,
    pub attempt: u32,
    pub request: ImageRequest,
}

/// What a host must do after a call: deliver messages, start image jobs,
/// and re-arm its timer at `Session::next_deadline`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dispatch {
    pub messages: Vec<Outbound>,
    pub jobs: Vec<ImageJob>,
    /// Every participant gets a fresh snapshot when this is set.
    pub broadcast: bool,
    /// Log sequence numbers appended by this call.
    pub records: Vec<u64>,
}

impl Dispatch {
    fn merge(&mut self, other: Dispatch) {
        self.messages.extend(other.messages);
        self.jobs.extend(other.jobs);
        self.broadcast |= other.broadcast;
        self.records.extend(other.records);
    }

    fn error(to: &PlayerId, err: &SessionError, reply_to: Option<u64>) -> Self {
        Dispatch {
            messages: vec![Outbound { to: to.clone(), message: ServerMessage::Error(err.to_body(reply_to)) }],
            ..Default::default()
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("empty log")]
    Empty,
    #[error("first record must be session_created")]
    MissingHeader,
    #[error("record {seq}: sequence gap (expected {expected})")]
    Gap { seq: u64, expected: u64 },
    #[error("record {seq}: state hash mismatch")]
    HashMismatch { seq: u64 },
    #[error("record {seq}: {source}")]
    Rejected { seq: u64, source: SessionError },
}

#[derive(Debug)]
pub struct Session {
    code: String,
    config: GameConfig,
    seed: u64,
    pod_count: usize,
    token_digest: String,
    created_at: u64,
    participants: BTreeMap<PlayerId, Participant>,
    pods: Vec<Vec<PlayerId>>,
    evaluator_links: BTreeMap<PodId, PodId>,
    games: BTreeMap<PodId, GameState>,
    responses: Vec<Response>,
    log: Vec<EventRecord>,
    sink: Option<LogSink>,
}

fn token_digest(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

/// Pod i is judged by pod i+1 when there are at least two.
fn links_for(pods: usize) -> BTreeMap<PodId, PodId> {
    if pods < 2 {
        return BTreeMap::new();
    }
    (0..pods as PodId).map(|i| (i, (i + 1) % pods as PodId)).collect()
}

#[derive(Serialize)]
struct CoreView<'a> {
    participants: &'a BTreeMap<PlayerId, Participant>,
    pods: &'a Vec<Vec<PlayerId>>,
    responses: &'a Vec<Response>,
}

impl Session {
    pub fn create(code: impl Into<String>, config: GameConfig, options: SessionOptions, now: u64) -> Result<Self, ConfigErrors> {
        let mut problems = match config.validate() {
            Ok(()) => Vec::new(),
            Err(ConfigErrors(list)) => list,
        };
        if options.pods == 0 {
            problems.push(FieldError { field: "session.pods".into(), message: "must be at least 1".into() });
        }
        if !problems.is_empty() {
            return Err(ConfigErrors(problems));
        }
        let mut session = Session {
            code: code.into(),
            seed: options.seed,
            pod_count: options.pods,
            token_digest: token_digest(&options.facilitator_token),
            created_at: now,
            participants: BTreeMap::new(),
            pods: vec![Vec::new(); options.pods],
            evaluator_links: links_for(options.pods),
            games: BTreeMap::new(),
            responses: Vec::new(),
            log: Vec::new(),
            sink: None,
            config,
        };
        let event = LogEvent::SessionCreated {
            seed: session.seed,
            pods: session.pod_count,
            config: session.config.clone(),
            facilitator_token_sha256: session.token_digest.clone(),
        };
        let hash = session.core_hash();
        session.log.push(EventRecord {
            seq: 0,
            ts: now,
            session: session.code.clone(),
            pod: None,
            actor: SYSTEM_ACTOR.into(),
            event,
            state_hash: hash,
        });
        Ok(session)
    }

    pub fn code(&self) -> &str {
        &self.code
    }

    pub fn config(&self) -> &GameConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn created_at(&self) -> u64 {
        self.created_at
    }

    pub fn pod_count(&self) -> usize {
        self.pod_count
    }

    pub fn pods(&self) -> &[Vec<PlayerId>] {
        &self.pods
    }

    pub fn evaluator_links(&self) -> &BTreeMap<PodId, PodId> {
        &self.evaluator_links
    }

    pub fn game(&self, pod: PodId) -> Option<&GameState> {
        self.games.get(&pod)
    }

    pub fn games(&self) -> &BTreeMap<PodId, GameState> {
        &self.games
    }

    pub fn participant(&self, id: &PlayerId) -> Option<&Participant> {
        self.participants.get(id)
    }

    pub fn participants(&self) -> impl Iterator<Item = &Participant> {
        self.participants.values()
    }

    pub fn responses(&self) -> &[Response] {
        &self.responses
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.log
    }

    /// True once every pod that has a game has reached GameResult.
    pub fn is_finished(&self) -> bool {
        !self.games.is_empty() && self.games.values().all(|g| g.phase == Phase::GameResult)
    }

    /// Writes the log so far to `path` and appends every later record.
    pub fn persist_to(&mut self, path: impl AsRef<Path>) -> Result<(), SessionError> {
        let io = |source| SessionError::Io { path: path.as_ref().display().to_string(), source };
        let mut sink = LogSink::open(path.as_ref()).map_err(io)?;
        for r in &self.log {
            sink.append(r).map_err(io)?;
        }
        self.sink = Some(sink);
        Ok(())
    }

    pub fn export_log(&self) -> Vec<u8> {
        write_jsonl(&self.log)
    }

    pub fn snapshot(&self, viewer: &PlayerId) -> Result<Snapshot, SessionError> {
        self.build_snapshot(viewer).ok_or_else(|| SessionError::UnknownPlayer(viewer.clone()))
    }

    /// Expands a dispatch into the snapshot messages it implies.
    pub fn deliver(&self, dispatch: &Dispatch) -> Vec<Outbound> {
        let mut out = dispatch.messages.clone();
        if dispatch.broadcast {
            for id in self.participants.keys() {
                if let Some(s) = self.build_snapshot(id) {
                    out.push(Outbound { to: id.clone(), message: ServerMessage::Snapshot(Box::new(s)) });
                }
            }
        }
        out
    }

    pub fn next_deadline(&self) -> Option<u64> {
        self.games.values().filter_map(|g| g.deadline).min()
    }

    fn core_hash(&self) -> String {
        let view = CoreView { participants: &self.participants, pods: &self.pods, responses: &self.responses };
        hex::encode(Sha256::digest(serde_json::to_vec(&view).expect("core state serializes")))
    }

    /// Game events hash their pod's game; a join that completes a pod hashes
    /// the new game; everything else hashes the session roster and responses.
    fn hash_for(&self, pod: Option<PodId>, event: &LogEvent) -> String {
        let game = match event {
            LogEvent::Game(_) | LogEvent::PlayerJoined { .. } => pod.and_then(|p| self.games.get(&p)),
            _ => None,
        };
        match game {
            Some(game) => game.state_hash(),
            None => self.core_hash(),
        }
    }

    fn mint_id(&self) -> PlayerId {
        let mut index = self.participants.len() as u64;
        loop {
            let id = PlayerId::new(format!("p{:016x}", derive_seed(self.seed, "player", index)));
            if !self.participants.contains_key(&id) {
                return id;
            }
            index += 1;
        }
    }

    fn open_pod(&self) -> Option<(PodId, usize)> {
        self.pods.iter().position(|p| p.len() < POD_SIZE).map(|i| (i as PodId, self.pods[i].len()))
    }

    /// Applies a log event to in-memory state. Shared by live handling and replay.
    fn apply_log_event(&mut self, pod: Option<PodId>, event: &LogEvent) -> Result<Vec<Effect>, SessionError> {
        match event {
            LogEvent::SessionCreated { .. } => Err(ProtocolError("duplicate session_created".into()).into()),
            LogEvent::PlayerJoined { player, name, role, pod, seat } => {
                if let Some(p) = pod {
                    let roster = self.pods.get_mut(*p as usize).ok_or(SessionError::NoGame(*p))?;
                    if roster.len() >= POD_SIZE {
                        return Err(SessionError::Full);
                    }
                    roster.push(player.clone());
                }
                self.participants.insert(
                    player.clone(),
                    Participant { id: player.clone(), name: name.clone(), role: *role, pod: *pod, seat: *seat },
                );
                if let Some(p) = pod {
                    let roster = &self.pods[*p as usize];
                    if roster.len() == POD_SIZE {
                        let seed = derive_seed(self.seed, "pod", *p as u64);
                        let game = GameState::new(self.config.clone(), roster.clone(), seed)?;
                        self.games.insert(*p, game);
                    }
                }
                Ok(Vec::new())
            }
            LogEvent::Game(ev) => {
                let pod = pod.ok_or(SessionError::NoGame(0))?;
                let game = self.games.get(&pod).ok_or(SessionError::NoGame(pod))?;
                let (next, effects) = advance(game, ev)?;
                self.games.insert(pod, next);
                Ok(effects)
            }
            LogEvent::Questionnaire(r) => {
                self.check_response(r)?;
                self.responses.push(r.clone());
                Ok(Vec::new())
            }
        }
    }

    fn check_response(&self, r: &Response) -> Result<(), StudyError> {
        if r.game != self.config.kind {
            return Err(StudyError::WrongGame(r.game));
        }
        validate_response(r)?;
        if self.responses.iter().any(|x| x.participant == r.participant && x.stage == r.stage) {
            return Err(StudyError::AlreadyResponded {
                participant: r.participant.clone(),
                game: r.game,
                stage: r.stage.as_str(),
            });
        }
        Ok(())
    }

    /// Applies, logs and persists one event. Rejections leave no trace.
    fn commit(&mut self, pod: Option<PodId>, actor: &str, event: LogEvent, now: u64) -> Result<Dispatch, SessionError> {
        let before = self.sink.is_some().then(|| (self.participants.clone(), self.pods.clone(), self.games.clone(), self.responses.len()));
        let effects = self.apply_log_event(pod, &event)?;
        let record = EventRecord {
            seq: self.log.len() as u64,
            ts: now,
            session: self.code.clone(),
            pod,
            actor: actor.into(),
            state_hash: self.hash_for(pod, &event),
            event,
        };
        if let Some(sink) = self.sink.as_mut() {
            if let Err(source) = sink.append(&record) {
                let path = sink.path().display().to_string();
                let (participants, pods, games, responses) = before.expect("captured when sink exists");
                self.participants = participants;
                self.pods = pods;
                self.games = games;
                self.responses.truncate(responses);
                return Err(SessionError::Io { path, source });
            }
        }
        let mut dispatch = Dispatch { broadcast: true, records: vec![record.seq], ..Default::default() };
        if let (Some(pod), LogEvent::Game(ev)) = (pod, &record.event) {
            self.effects_to_dispatch(pod, ev, effects, &mut dispatch);
        }
        self.log.push(record);
        Ok(dispatch)
    }

    fn audience(&self) -> impl Iterator<Item = &PlayerId> {
        self.participants.keys()
    }

    fn to_all(&self, message: ServerMessage, dispatch: &mut Dispatch) {
        for id in self.audience() {
            dispatch.messages.push(Outbound { to: id.clone(), message: message.clone() });
        }
    }

    fn effects_to_dispatch(&self, pod: PodId, event: &GameEvent, effects: Vec<Effect>, dispatch: &mut Dispatch) {
        let game = &self.games[&pod];
        if let EventKind::ImageGenerated { side, image } = &event.kind {
            let message = ServerMessage::ImageReady { pod, pair: *side, attempt: image.attempt, digest: image.digest.clone() };
            self.to_all(message, dispatch);
        }
        for effect in effects {
            match effect {
                Effect::RequestImage { side, attempt, prompt, category, seed } => {
                    let mut request = ImageRequest::new(prompt, seed);
                    request.category = Some(category);
                    request.session = self.code.clone();
                    request.pod = pod;
                    request.round = game.round_index;
                    request.attempt_index = attempt;
                    dispatch.jobs.push(ImageJob { pod, side, attempt, request });
                }
                Effect::RevealAgent { round, agent } => {
                    let seat = game.seat_of(&agent).map_or(0, |s| s + 1);
                    let agent_name = self.participants.get(&agent).map(|p| p.name.clone()).unwrap_or_default();
                    self.to_all(ServerMessage::Reveal { pod, round, agent_seat: seat, agent_name }, dispatch);
                }
                Effect::RecordScore { round, .. } => {
                    if let Some(result) = view::round_result(game, round) {
                        self.to_all(ServerMessage::RoundResult { pod, result }, dispatch);
                    }
                }
                Effect::StartTimer { .. } | Effect::Broadcast => {}
            }
        }
        if game.phase == Phase::GameResult {
            if let Some(result) = view::game_result(game) {
                self.to_all(ServerMessage::GameResult { pod, result }, dispatch);
            }
        }
    }

    fn system(&mut self, pod: PodId, kind: EventKind, now: u64) -> Result<Dispatch, SessionError> {
        let mut dispatch = self.commit(Some(pod), SYSTEM_ACTOR, LogEvent::Game(GameEvent::new(now, kind)), now)?;
        dispatch.merge(self.maintain(now));
        Ok(dispatch)
    }

    /// Evaluator panel for a pod: its linked pod once full, else Evaluator-role
    /// participants, else facilitators.
    fn panel_for(&self, pod: PodId) -> Vec<PlayerId> {
        if let Some(linked) = self.evaluator_links.get(&pod) {
            let roster = &self.pods[*linked as usize];
            if roster.len() == POD_SIZE {
                return roster.clone();
            }
        }
        for role in [JoinRole::Evaluator, JoinRole::Facilitator] {
            let panel: Vec<PlayerId> =
                self.participants.values().filter(|p| p.role == role).map(|p| p.id.clone()).collect();
            if !panel.is_empty() {
                return panel;
            }
        }
        Vec::new()
    }

    /// Assigns evaluators to Secret Agent games that need them. Linked pods
    /// are assigned as soon as they fill; the fallback panel waits until the
    /// evaluation opens so late joiners are included.
    fn maintain(&mut self, now: u64) -> Dispatch {
        let mut dispatch = Dispatch::default();
        if self.config.kind != GameKind::SecretAgent {
            return dispatch;
        }
        let pods: Vec<PodId> = self
            .games
            .iter()
            .filter(|(_, g)| g.evaluators.is_empty() && g.phase != Phase::GameResult)
            .map(|(p, _)| *p)
            .collect();
        for pod in pods {
            let linked_full = self
                .evaluator_links
                .get(&pod)
                .is_some_and(|l| self.pods[*l as usize].len() == POD_SIZE);
            let evaluating = self.games[&pod].phase == Phase::ExternalEvaluation;
            if !(linked_full || evaluating) {
                continue;
            }
            let panel = self.panel_for(pod);
            if panel.is_empty() {
                continue;
            }
            match self.commit(Some(pod), SYSTEM_ACTOR, LogEvent::Game(GameEvent::new(now, EventKind::EvaluatorsAssigned { evaluators: panel })), now) {
                Ok(d) => dispatch.merge(d),
                Err(e) => tracing::warn!(pod, error = %e, "evaluator assignment rejected"),
            }
        }
        dispatch
    }

    /// Joins a participant; the returned dispatch carries the broadcast.
    pub fn join(&mut self, name: &str, role: JoinRole, token: Option<&str>, now: u64) -> Result<(PlayerId, Dispatch), SessionError> {
        let name = name.trim();
        if name.is_empty() || name.chars().count() > MAX_NAME_CHARS {
            return Err(SessionError::InvalidName);
        }
        let (pod, seat) = match role {
            JoinRole::Regular => {
                let (pod, seat) = self.open_pod().ok_or(SessionError::Full)?;
                (Some(pod), Some(seat))
            }
            JoinRole::Evaluator => (None, None),
            JoinRole::Facilitator => {
                if token.map(token_digest).as_deref() != Some(self.token_digest.as_str()) {
                    return Err(SessionError::Unauthorized);
                }
                (None, None)
            }
        };
        let id = self.mint_id();
        let event = LogEvent::PlayerJoined { player: id.clone(), name: name.into(), role, pod, seat };
        let mut dispatch = self.commit(pod, SYSTEM_ACTOR, event, now)?;
        dispatch.merge(self.maintain(now));
        Ok((id, dispatch))
    }

    /// Handles a raw frame from a connected participant. Errors become an
    /// `error` reply to the sender and leave the session unchanged.
    pub fn handle_message(&mut self, player: &PlayerId, raw: &str, now: u64) -> Dispatch {
        match ClientMessage::parse(raw) {
            Ok((seq, message)) => self.handle(player, seq, message, now),
            Err(e) => Dispatch::error(player, &SessionError::Protocol(e), None),
        }
    }

    pub fn handle(&mut self, player: &PlayerId, seq: u64, message: ClientMessage, now: u64) -> Dispatch {
        match self.try_handle(player, message, now) {
            Ok(mut dispatch) => {
                let record = dispatch.records.first().copied().unwrap_or(0);
                dispatch.messages.insert(
                    0,
                    Outbound { to: player.clone(), message: ServerMessage::Ack { reply_to: seq, record } },
                );
                dispatch
            }
            Err(e) => Dispatch::error(player, &e, Some(seq)),
        }
    }

    fn seated(&self, player: &PlayerId) -> Result<(PodId, &GameState), SessionError> {
        let me = self.participants.get(player).ok_or_else(|| SessionError::UnknownPlayer(player.clone()))?;
        let pod = me.pod.ok_or_else(|| SessionError::NoPod(player.clone()))?;
        let game = self.games.get(&pod).ok_or(SessionError::NoGame(pod))?;
        Ok((pod, game))
    }

    fn player_event(&mut self, player: &PlayerId, kind: EventKind, now: u64) -> Result<Dispatch, SessionError> {
        let (pod, _) = self.seated(player)?;
        self.game_event(pod, player, kind, now)
    }

    fn game_event(&mut self, pod: PodId, actor: &PlayerId, kind: EventKind, now: u64) -> Result<Dispatch, SessionError> {
        let mut dispatch = self.commit(Some(pod), actor.as_str(), LogEvent::Game(GameEvent::new(now, kind)), now)?;
        dispatch.merge(self.maintain(now));
        Ok(dispatch)
    }

    fn try_handle(&mut self, player: &PlayerId, message: ClientMessage, now: u64) -> Result<Dispatch, SessionError> {
        let me = self.participants.get(player).ok_or_else(|| SessionError::UnknownPlayer(player.clone()))?.clone();
        let p = player.clone();
        match message {
            ClientMessage::Join(request) => match request.resume {
                Some(id) if id == *player => Ok(Dispatch::default().with_snapshot(self, player)),
                _ => Err(ProtocolError("already joined".into()).into()),
            },
            ClientMessage::Ready => self.player_event(player, EventKind::PlayerReady { player: p }, now),
            ClientMessage::DrawCard => self.player_event(player, EventKind::CardDrawn { player: p }, now),
            ClientMessage::SubmitWords { text, submit } => {
                self.player_event(player, EventKind::WordsSubmitted { player: p, text, submit }, now)
            }
            ClientMessage::RequestAttempt { text } => {
                self.player_event(player, EventKind::AttemptRequested { player: p, text }, now)
            }
            ClientMessage::SelectImage { attempt } => {
                self.player_event(player, EventKind::ImageSelected { player: p, attempt }, now)
            }
            ClientMessage::CastImageVote { choice } => {
                self.player_event(player, EventKind::VoteCast { voter: p, choice }, now)
            }
            ClientMessage::CastAccusation { seat } => {
                let (_, game) = self.seated(player)?;
                let accused = seat
                    .checked_sub(1)
                    .and_then(|s| game.roster.get(s))
                    .map(|s| s.player.clone())
                    .ok_or(SessionError::NoSeat(seat))?;
                self.player_event(player, EventKind::AccusationCast { voter: p, accused }, now)
            }
            ClientMessage::CastEvalVote { pod, represents, diverse } => {
                let pod = match pod {
                    Some(pod) => pod,
                    None => self.open_evaluation_for(player).ok_or(SessionError::NoEvaluation)?,
                };
                if !self.games.contains_key(&pod) {
                    return Err(SessionError::NoGame(pod));
                }
                self.game_event(pod, player, EventKind::EvaluationReceived { evaluator: p, represents, diverse }, now)
            }
            ClientMessage::QuestionnaireResponse { game, stage, answers } => {
                self.submit_questionnaire(player, game, stage, answers, now)
            }
            ClientMessage::FacilitatorOverride { pod, action } => {
                if me.role != JoinRole::Facilitator {
                    return Err(SessionError::Unauthorized);
                }
                if !self.games.contains_key(&pod) {
                    return Err(SessionError::NoGame(pod));
                }
                self.game_event(pod, player, EventKind::FacilitatorOverride { action }, now)
            }
        }
    }

    fn open_evaluation_for(&self, player: &PlayerId) -> Option<PodId> {
        self.games
            .iter()
            .find(|(_, g)| {
                g.phase == Phase::ExternalEvaluation
                    && g.evaluators.contains(player)
                    && g.relay().is_some_and(|r| !r.evaluations.contains_key(player))
            })
            .map(|(p, _)| *p)
    }

    pub fn submit_questionnaire(
        &mut self,
        player: &PlayerId,
        game: GameKind,
        stage: Stage,
        answers: Vec<Answer>,
        now: u64,
    ) -> Result<Dispatch, SessionError> {
        let me = self.participants.get(player).ok_or_else(|| SessionError::UnknownPlayer(player.clone()))?;
        let pod = me.pod;
        let response = Response { participant: player.clone(), game, stage, answers, submitted_at: now };
        let mut dispatch = self.commit(pod, player.as_str(), LogEvent::Questionnaire(response), now)?;
        // Questionnaires do not touch game state; only the sender needs a refresh.
        dispatch.broadcast = false;
        Ok(dispatch.with_snapshot(self, player))
    }

    /// Fires every deadline at or before `now`.
    pub fn expire_due(&mut self, now: u64) -> Dispatch {
        let mut dispatch = Dispatch::default();
        loop {
            let due: Option<PodId> = self
                .games
                .iter()
                .find(|(_, g)| g.deadline.is_some_and(|d| d <= now))
                .map(|(p, _)| *p);
            let Some(pod) = due else { break };
            match self.system(pod, EventKind::DeadlineExpired, now) {
                Ok(d) => dispatch.merge(d),
                Err(e) => {
                    tracing::error!(pod, error = %e, "deadline expiry rejected");
                    break;
                }
            }
        }
        dispatch
    }

    pub fn image_completed(&mut self, job: &ImageJob, result: &ImageResult, now: u64) -> Result<Dispatch, SessionError> {
        let kind = EventKind::ImageGenerated { side: job.side, image: result.to_ref(job.attempt) };
        self.system(job.pod, kind, now)
    }

    pub fn image_failed(&mut self, job: &ImageJob, reason: &str, now: u64) -> Result<Dispatch, SessionError> {
        let kind = EventKind::GenerationFailed { side: job.side, attempt: job.attempt, reason: reason.into() };
        self.system(job.pod, kind, now)
    }

    /// Extends a live deadline on behalf of the facilitator.
    pub fn extend_deadline(&mut self, facilitator: &PlayerId, pod: PodId, seconds: u64, now: u64) -> Result<Dispatch, SessionError> {
        self.try_handle(facilitator, ClientMessage::FacilitatorOverride { pod, action: Override::ExtendDeadline { seconds } }, now)
    }

    /// Rebuilds a session from its log, checking every state hash.
    pub fn replay(records: &[EventRecord]) -> Result<Session, ReplayError> {
        let first = records.first().ok_or(ReplayError::Empty)?;
        let LogEvent::SessionCreated { seed, pods, config, facilitator_token_sha256 } = &first.event else {
            return Err(ReplayError::MissingHeader);
        };
        if first.seq != 0 {
            return Err(ReplayError::Gap { seq: first.seq, expected: 0 });
        }
        let mut session = Session {
            code: first.session.clone(),
            config: config.clone(),
            seed: *seed,
            pod_count: *pods,
            token_digest: facilitator_token_sha256.clone(),
            created_at: first.ts,
            participants: BTreeMap::new(),
            pods: vec![Vec::new(); *pods],
            evaluator_links: links_for(*pods),
            games: BTreeMap::new(),
            responses: Vec::new(),
            log: vec![first.clone()],
            sink: None,
        };
        if session.core_hash() != first.state_hash {
            return Err(ReplayError::HashMismatch { seq: 0 });
        }
        for (expected, record) in records.iter().enumerate().skip(1) {
            if record.seq != expected as u64 {
                return Err(ReplayError::Gap { seq: record.seq, expected: expected as u64 });
            }
            session
                .apply_log_event(record.pod, &record.event)
                .map_err(|source| ReplayError::Rejected { seq: record.seq, source })?;
            if session.hash_for(record.pod, &record.event) != record.state_hash {
                return Err(ReplayError::HashMismatch { seq: record.seq });
            }
            session.log.push(record.clone());
        }
        Ok(session)
    }
}

impl Dispatch {
    fn with_snapshot(mut self, session: &Session, to: &PlayerId) -> Self {
        if let Some(s) = session.build_snapshot(to) {
            self.messages.push(Outbound { to: to.clone(), message: ServerMessage::Snapshot(Box::new(s)) });
        }
        self
    }
}

/// Absolute deadline for a phase entered at `now`, or None for untimed phases.
pub fn schedule_deadline(config: &GameConfig, phase: Phase, now: u64) -> Option<u64> {
    let seconds = match (phase, config.kind) {
        (Phase::PromptComposition, GameKind::DiversityDuel) => config.compose_seconds,
        (Phase::PromptComposition, GameKind::SecretAgent) => config.turn_seconds,
        (Phase::ImageSelection, _) => config.select_seconds,
        (Phase::PeerVoting | Phase::ExternalEvaluation | Phase::Accusation, _) => config.vote_seconds,
        _ => return None,
    };
    Some(now + seconds * 1000)
}
