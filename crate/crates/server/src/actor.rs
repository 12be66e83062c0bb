//! One task per live session. Everything that touches the `Session` runs here,
//! so state changes are serialized without locks.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use biasgames_core::imagegen::{ImageGateway, ImageResult};
use biasgames_core::rules::PlayerId;
use biasgames_core::session::{
    ClientMessage, Dispatch, ErrorBody, ImageJob, JoinRequest, ServerMessage, Session,
};
use tokio::sync::{mpsc, oneshot};

pub(crate) fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

pub(crate) type Outgoing = mpsc::UnboundedSender<String>;

pub(crate) enum Command {
    Connect {
        seq: u64,
        request: JoinRequest,
        conn: u64,
        tx: Outgoing,
        reply: oneshot::Sender<Result<PlayerId, ErrorBody>>,
    },
    Frame {
        player: PlayerId,
        raw: String,
    },
    Disconnect {
        player: PlayerId,
        conn: u64,
    },
    ImageDone {
        job: ImageJob,
        result: Result<ImageResult, String>,
    },
    Image {
        digest: String,
        reply: oneshot::Sender<Option<Vec<u8>>>,
    },
}

pub(crate) struct Actor {
    session: Session,
    gateway: ImageGateway,
    inbox: mpsc::Receiver<Command>,
    /// Handle back into our own inbox for image completions.
    self_tx: mpsc::Sender<Command>,
    connections: BTreeMap<PlayerId, (u64, Outgoing)>,
    images: HashMap<String, Vec<u8>>,
    out_seq: u64,
}

impl Actor {
    pub(crate) fn new(session: Session, gateway: ImageGateway, inbox: mpsc::Receiver<Command>, self_tx: mpsc::Sender<Command>) -> Self {
        Actor { session, gateway, inbox, self_tx, connections: BTreeMap::new(), images: HashMap::new(), out_seq: 0 }
    }

    pub(crate) fn persist(&mut self, dir: &PathBuf) {
        let path = dir.join(format!("{}.jsonl", self.session.code()));
        if let Err(e) = self.session.persist_to(&path) {
            tracing::error!(path = %path.display(), error = %e, "cannot persist session log");
        }
    }

    pub(crate) async fn run(mut self) {
        loop {
            let sleep = match self.session.next_deadline() {
                Some(deadline) => Duration::from_millis(deadline.saturating_sub(now_ms())),
                None => Duration::from_secs(3600),
            };
            tokio::select! {
                command = self.inbox.recv() => match command {
                    Some(command) => self.on_command(command),
                    None => break,
                },
                _ = tokio::time::sleep(sleep) => {
                    let dispatch = self.session.expire_due(now_ms());
                    self.dispatch(dispatch);
                }
            }
        }
        tracing::info!(code = self.session.code(), "session closed");
    }

    fn on_command(&mut self, command: Command) {
        match command {
            Command::Connect { seq, request, conn, tx, reply } => self.connect(seq, request, conn, tx, reply),
            Command::Frame { player, raw } => {
                let dispatch = self.session.handle_message(&player, &raw, now_ms());
                self.dispatch(dispatch);
            }
            Command::Disconnect { player, conn } => {
                if self.connections.get(&player).is_some_and(|(c, _)| *c == conn) {
                    self.connections.remove(&player);
                }
            }
            Command::ImageDone { job, result } => {
                let now = now_ms();
                let outcome = match &result {
                    Ok(image) => {
                        if let Some(bytes) = image.bytes() {
                            self.images.insert(image.content_digest.clone(), bytes.to_vec());
                        }
                        self.session.image_completed(&job, image, now)
                    }
                    Err(reason) => self.session.image_failed(&job, reason, now),
                };
                match outcome {
                    Ok(dispatch) => self.dispatch(dispatch),
                    // The phase moved on (e.g. timer) before the image landed.
                    Err(e) => tracing::warn!(pod = job.pod, error = %e, "late image dropped"),
                }
            }
            Command::Image { digest, reply } => {
                let _ = reply.send(self.images.get(&digest).cloned());
            }
        }
    }

    fn connect(&mut self, seq: u64, request: JoinRequest, conn: u64, tx: Outgoing, reply: oneshot::Sender<Result<PlayerId, ErrorBody>>) {
        let (player, dispatch) = match request.resume.clone() {
            Some(id) if self.session.participant(&id).is_some() => {
                let dispatch = self.session.handle(&id, seq, ClientMessage::Join(request), now_ms());
                (id, dispatch)
            }
            Some(id) => {
                let err = biasgames_core::session::SessionError::UnknownPlayer(id);
                let _ = reply.send(Err(err.to_body(Some(seq))));
                return;
            }
            None => match self.session.join(&request.name, request.role, request.token.as_deref(), now_ms()) {
                Ok((id, mut dispatch)) => {
                    let record = dispatch.records.first().copied().unwrap_or(0);
                    dispatch.messages.insert(
                        0,
                        biasgames_core::session::Outbound { to: id.clone(), message: ServerMessage::Ack { reply_to: seq, record } },
                    );
                    (id, dispatch)
                }
                Err(e) => {
                    let _ = reply.send(Err(e.to_body(Some(seq))));
                    return;
                }
            },
        };
        // A newer connection for the same participant replaces the old one.
        self.connections.insert(player.clone(), (conn, tx));
        let _ = reply.send(Ok(player));
        self.dispatch(dispatch);
    }

    fn dispatch(&mut self, dispatch: Dispatch) {
        for job in &dispatch.jobs {
            let gateway = self.gateway.clone();
            let tx = self.self_tx.clone();
            let job = job.clone();
            tokio::spawn(async move {
                let result = gateway.generate(&job.request).await.map_err(|e| e.to_string());
                let _ = tx.send(Command::ImageDone { job, result }).await;
            });
        }
        for out in self.session.deliver(&dispatch) {
            if let Some((_, tx)) = self.connections.get(&out.to) {
                self.out_seq += 1;
                let _ = tx.send(out.message.to_json(self.out_seq));
            }
        }
    }
}
