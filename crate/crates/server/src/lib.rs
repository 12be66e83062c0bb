//! HTTP + WebSocket front end for live sessions.
//!
//! - `GET /health` → `{"status":"ok","version":..,"active_sessions":n}`
//! - `POST /sessions` with `{"game":"secret_agent","pods":1}` → room code and facilitator token
//! - `GET /ws/{code}`: upgrade; the first frame must be a `join` envelope
//! - `GET /sessions/{code}/images/{digest}`: PNG bytes of a generated image

mod actor;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use biasgames_core::rules::GameKind;
use biasgames_core::session::{
    ClientMessage, ErrorBody, ServerMessage, Session, SessionError, SessionOptions, SessionRegistry,
};
use biasgames_core::settings::{Settings, SettingsError};
use futures_util::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot};

use actor::{now_ms, Actor, Command};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
const INBOX: usize = 256;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub settings: Settings,
    /// Session logs are appended to `<dir>/<code>.jsonl` when set.
    pub data_dir: Option<PathBuf>,
    /// Seeds room codes, tokens and session seeds; random when `None`.
    pub seed: Option<u64>,
}

struct Inner {
    config: ServerConfig,
    gateway: biasgames_core::imagegen::ImageGateway,
    registry: Mutex<SessionRegistry>,
    sessions: Mutex<BTreeMap<String, mpsc::Sender<Command>>>,
    next_conn: AtomicU64,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Fails when the image backend cannot be configured (e.g. a missing API key).
    pub fn new(config: ServerConfig) -> Result<Self, SettingsError> {
        let gateway = config.settings.imagegen.gateway()?;
        let seed = config.seed.unwrap_or_else(rand::random);
        Ok(AppState(Arc::new(Inner {
            config,
            gateway,
            registry: Mutex::new(SessionRegistry::new(seed)),
            sessions: Mutex::new(BTreeMap::new()),
            next_conn: AtomicU64::new(1),
        })))
    }

    pub fn active_sessions(&self) -> usize {
        self.0.sessions.lock().expect("sessions lock").len()
    }

    fn session(&self, code: &str) -> Option<mpsc::Sender<Command>> {
        self.0.sessions.lock().expect("sessions lock").get(&code.to_ascii_uppercase()).cloned()
    }

    /// Creates a session and starts its task.
    pub fn create_session(&self, game: GameKind, pods: usize) -> Result<CreatedSession, SessionError> {
        let config = self.0.config.settings.game(game).clone();
        let mut sessions = self.0.sessions.lock().expect("sessions lock");
        let created = {
            let mut registry = self.0.registry.lock().expect("registry lock");
            loop {
                let c = registry.reserve();
                if !sessions.contains_key(&c.code) {
                    break c;
                }
            }
        };
        let options = SessionOptions { pods, facilitator_token: created.facilitator_token.clone(), seed: created.seed };
        let session = Session::create(created.code.clone(), config, options, now_ms()).map_err(SessionError::Config)?;
        let (tx, rx) = mpsc::channel(INBOX);
        let mut actor = Actor::new(session, self.0.gateway.clone(), rx, tx.clone());
        if let Some(dir) = &self.0.config.data_dir {
            actor.persist(dir);
        }
        tokio::spawn(actor.run());
        sessions.insert(created.code.clone(), tx);
        tracing::info!(code = created.code, game = %game, pods, "session created");
        Ok(CreatedSession { code: created.code, facilitator_token: created.facilitator_token, game, pods })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreatedSession {
    pub code: String,
    pub facilitator_token: String,
    pub game: GameKind,
    pub pods: usize,
}

#[derive(Debug, Deserialize)]
struct CreateRequest {
    game: GameKind,
    #[serde(default)]
    pods: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub active_sessions: usize,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create))
        .route("/sessions/{code}/images/{digest}", get(image))
        .route("/ws/{code}", get(ws))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health { status: "ok".into(), version: VERSION.into(), active_sessions: state.active_sessions() })
}

fn error_response(status: StatusCode, err: &SessionError) -> Response {
    (status, Json(err.to_body(None))).into_response()
}

async fn create(State(state): State<AppState>, Json(req): Json<CreateRequest>) -> Response {
    let pods = req.pods.unwrap_or(state.0.config.settings.pods);
    match state.create_session(req.game, pods) {
        Ok(created) => (StatusCode::CREATED, Json(created)).into_response(),
        Err(e) => error_response(StatusCode::UNPROCESSABLE_ENTITY, &e),
    }
}

async fn image(State(state): State<AppState>, Path((code, digest)): Path<(String, String)>) -> Response {
    let Some(tx) = state.session(&code) else {
        return error_response(StatusCode::NOT_FOUND, &SessionError::NotFound(code));
    };
    let (reply, rx) = oneshot::channel();
    if tx.send(Command::Image { digest, reply }).await.is_err() {
        return StatusCode::SERVICE_UNAVAILABLE.into_response();
    }
    match rx.await {
        Ok(Some(bytes)) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        _ => StatusCode::NOT_FOUND.into_response(),
    }
}

async fn ws(State(state): State<AppState>, Path(code): Path<String>, upgrade: WebSocketUpgrade) -> Response {
    match state.session(&code) {
        Some(tx) => upgrade.on_upgrade(move |socket| connection(state, tx, socket)),
        None => error_response(StatusCode::NOT_FOUND, &SessionError::NotFound(code)),
    }
}

async fn send_error(socket: &mut WebSocket, body: ErrorBody) {
    let text = ServerMessage::Error(body).to_json(0);
    let _ = socket.send(Message::Text(text.into())).await;
    let _ = socket.send(Message::Close(None)).await;
}

async fn connection(state: AppState, session: mpsc::Sender<Command>, mut socket: WebSocket) {
    // Handshake: the first text frame must be a join.
    let first = loop {
        match socket.recv().await {
            Some(Ok(Message::Text(text))) => break text.to_string(),
            Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
            Some(Ok(_)) => continue,
        }
    };
    let (seq, request) = match ClientMessage::parse(&first) {
        Ok((seq, ClientMessage::Join(request))) => (seq, request),
        Ok((seq, _)) => {
            let err = SessionError::Protocol(biasgames_core::session::ProtocolError("first message must be join".into()));
            return send_error(&mut socket, err.to_body(Some(seq))).await;
        }
        Err(e) => return send_error(&mut socket, SessionError::Protocol(e).to_body(None)).await,
    };

    let conn = state.0.next_conn.fetch_add(1, Ordering::Relaxed);
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<String>();
    let (reply, joined) = oneshot::channel();
    if session.send(Command::Connect { seq, request, conn, tx: out_tx, reply }).await.is_err() {
        return;
    }
    let player = match joined.await {
        Ok(Ok(player)) => player,
        Ok(Err(body)) => return send_error(&mut socket, body).await,
        Err(_) => return,
    };

    let (mut sink, mut stream) = socket.split();
    let writer = tokio::spawn(async move {
        while let Some(text) = out_rx.recv().await {
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    while let Some(Ok(msg)) = stream.next().await {
        match msg {
            Message::Text(text) => {
                let command = Command::Frame { player: player.clone(), raw: text.to_string() };
                if session.send(command).await.is_err() {
                    break;
                }
            }
            Message::Close(_) => break,
            _ => {}
        }
    }
    let _ = session.send(Command::Disconnect { player, conn }).await;
    writer.abort();
}
