use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use biasgames_core::rules::{GameKind, Phase};
use biasgames_core::session::{ClientMessage, JoinRequest, JoinRole, ServerMessage, Snapshot};
use biasgames_core::settings::Settings;
use biasgames_core::sim::{BotClient, Profile};
use biasgames_server::{AppState, CreatedSession, Health, ServerConfig};
use futures_util::{SinkExt, StreamExt};
use tokio_tungstenite::tungstenite::Message;

async fn start() -> (String, AppState) {
    let config = ServerConfig { settings: Settings::default(), data_dir: None, seed: Some(5) };
    let state = AppState::new(config).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(biasgames_server::serve(listener, state.clone()));
    (format!("127.0.0.1:{}", addr.port()), state)
}

async fn create(addr: &str, game: &str) -> CreatedSession {
    let res = reqwest::Client::new()
        .post(format!("http://{addr}/sessions"))
        .json(&serde_json::json!({ "game": game }))
        .send()
        .await
        .unwrap();
    assert_eq!(res.status(), 201);
    res.json().await.unwrap()
}

#[derive(Debug, Default)]
struct Transcript {
    frames: Vec<String>,
    last: Option<Snapshot>,
}

type Socket = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn connect_and_join(addr: &str, code: &str, request: JoinRequest) -> Socket {
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws/{code}")).await.unwrap();
    ws.send(Message::Text(ClientMessage::Join(request).to_json(1).into())).await.unwrap();
    ws
}

/// Runs a bot over a live socket until `done` says stop or its game ends.
async fn bot(addr: String, code: String, request: JoinRequest, mut brain: Option<BotClient>, done: Arc<AtomicBool>) -> Transcript {
    let mut ws = connect_and_join(&addr, &code, request).await;
    let mut t = Transcript::default();
    let mut seq = 1;
    let deadline = tokio::time::Instant::now() + Duration::from_secs(60);
    while !done.load(Ordering::Relaxed) && tokio::time::Instant::now() < deadline {
        let fresh = match tokio::time::timeout(Duration::from_millis(250), ws.next()).await {
            Ok(Some(Ok(Message::Text(text)))) => {
                let text = text.to_string();
                let parsed = msg(&text);
                t.frames.push(text);
                match parsed {
                    ServerMessage::Snapshot(s) => {
                        t.last = Some(*s);
                        true
                    }
                    _ => false,
                }
            }
            Ok(Some(Ok(_))) => false,
            Ok(_) => break,
            // Quiet socket: look at the last snapshot again.
            Err(_) => true,
        };
        let Some(snap) = &t.last else { continue };
        if snap.pod.as_ref().is_some_and(|p| p.phase == Phase::GameResult) {
            break;
        }
        if fresh {
            if let Some(msg) = brain.as_mut().and_then(|b| b.act(snap)) {
                seq += 1;
                ws.send(Message::Text(msg.to_json(seq).into())).await.unwrap();
            }
        }
    }
    let _ = ws.close(None).await;
    t
}

fn join(name: &str, role: JoinRole, token: Option<&str>) -> JoinRequest {
    JoinRequest { name: name.into(), role, token: token.map(String::from), resume: None }
}

async fn play(addr: &str, game: GameKind, evaluators: usize) -> (Transcript, Vec<Transcript>, Vec<Transcript>) {
    let created = create(addr, game.as_str()).await;
    let done = Arc::new(AtomicBool::new(false));
    let settings = Settings::default();
    let ban = &settings.game(game).ban_list;
    let profile = Profile::parse("default").unwrap();
    let fac = tokio::spawn(bot(
        addr.into(),
        created.code.clone(),
        join("Facilitator", JoinRole::Facilitator, Some(&created.facilitator_token)),
        None,
        done.clone(),
    ));
    // Let the facilitator in first so it sees the whole game.
    tokio::time::sleep(Duration::from_millis(100)).await;
    let mut evals = Vec::new();
    for k in 0..evaluators {
        let brain = BotClient::new(profile.clone(), true, ban, 100 + k as u64);
        evals.push(tokio::spawn(bot(addr.into(), created.code.clone(), join(&format!("E{k}"), JoinRole::Evaluator, None), Some(brain), done.clone())));
    }
    tokio::time::sleep(Duration::from_millis(100)).await;
    let mut players = Vec::new();
    for k in 0..4 {
        let brain = BotClient::new(profile.clone(), false, ban, k as u64);
        players.push(tokio::spawn(bot(addr.into(), created.code.clone(), join(&format!("P{k}"), JoinRole::Regular, None), Some(brain), done.clone())));
    }
    let mut ps = Vec::new();
    for p in players {
        ps.push(p.await.unwrap());
    }
    done.store(true, Ordering::Relaxed);
    let mut es = Vec::new();
    for e in evals {
        es.push(e.await.unwrap());
    }
    (fac.await.unwrap(), ps, es)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn diversity_duel_over_websockets() {
    let (addr, state) = start().await;
    let (fac, players, _) = play(&addr, GameKind::DiversityDuel, 0).await;
    for p in &players {
        let pod = p.last.as_ref().unwrap().pod.as_ref().unwrap();
        assert_eq!(pod.phase, Phase::GameResult, "{:?}", p.frames.last());
        assert_eq!(pod.results.len(), 3);
    }
    assert!(fac.frames.iter().any(|f| f.contains("\"game_result\"")));
    assert_eq!(state.active_sessions(), 1);

    // Images are served by digest.
    let digest = players[0]
        .frames
        .iter()
        .find_map(|f| match msg(f) {
            ServerMessage::ImageReady { digest, .. } => Some(digest),
            _ => None,
        })
        .expect("an image_ready frame");
    let code = fac.last.as_ref().unwrap().session.clone();
    let res = reqwest::get(format!("http://{addr}/sessions/{code}/images/{digest}")).await.unwrap();
    assert_eq!(res.status(), 200);
    assert_eq!(res.headers()["content-type"], "image/png");
    assert_eq!(&res.bytes().await.unwrap()[..4], b"\x89PNG");
    let res = reqwest::get(format!("http://{addr}/sessions/{code}/images/{}", "0".repeat(64))).await.unwrap();
    assert_eq!(res.status(), 404);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn secret_agent_over_websockets_without_leaks() {
    let (addr, _) = start().await;
    let (fac, players, evals) = play(&addr, GameKind::SecretAgent, 3).await;
    let mut seat_ids = std::collections::BTreeMap::new();
    for p in &players {
        let snap = p.last.as_ref().unwrap();
        let pod = snap.pod.as_ref().unwrap();
        assert_eq!(pod.phase, Phase::GameResult);
        seat_ids.insert(pod.your_seat.unwrap(), snap.viewer.clone());
    }
    // Agent seat per round, as finally revealed.
    let reveals: Vec<usize> = fac
        .frames
        .iter()
        .filter_map(|f| match msg(f) {
            ServerMessage::Reveal { agent_seat, .. } => Some(agent_seat),
            _ => None,
        })
        .collect();
    assert_eq!(reveals.len(), 2);
    for t in players.iter().chain(&evals) {
        let me = &t.last.as_ref().unwrap().viewer;
        let mut round = 0;
        for f in &t.frames {
            if f.contains("\"reveal\"") {
                round += 1;
                continue;
            }
            if let Some(seat) = reveals.get(round) {
                let agent = &seat_ids[seat];
                assert!(agent == me || !f.contains(agent.as_str()), "agent id leaked to {me} in round {round}: {f}");
            }
        }
    }
    for e in &evals {
        assert!(e.frames.iter().any(|f| f.contains("\"evaluations\":[{")), "evaluator never got a task");
    }
}

#[tokio::test]
async fn http_surface() {
    let (addr, state) = start().await;
    let h: Health = reqwest::get(format!("http://{addr}/health")).await.unwrap().json().await.unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.version, biasgames_server::VERSION);
    assert_eq!(h.active_sessions, 0);

    let client = reqwest::Client::new();
    let bad = client.post(format!("http://{addr}/sessions")).json(&serde_json::json!({"game": "chess"})).send().await.unwrap();
    assert!(bad.status().is_client_error());
    let zero = client.post(format!("http://{addr}/sessions")).json(&serde_json::json!({"game": "dd", "pods": 0})).send().await.unwrap();
    assert_eq!(zero.status(), 422);
    let created = create(&addr, "diversity_duel").await;
    assert!(biasgames_core::session::is_room_code(&created.code));
    assert_eq!(state.active_sessions(), 1);

    let missing = tokio_tungstenite::connect_async(format!("ws://{addr}/ws/NOPE00")).await;
    assert!(missing.is_err());

    // First frame must be a join.
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws/{}", created.code)).await.unwrap();
    ws.send(Message::Text(ClientMessage::Ready.to_json(3).into())).await.unwrap();
    let reply = ws.next().await.unwrap().unwrap().into_text().unwrap().to_string();
    match msg(&reply) {
        ServerMessage::Error(e) => assert_eq!((e.code.as_str(), e.reply_to), ("protocol", Some(3))),
        other => panic!("{other:?}"),
    }

    let mut ws = connect_and_join(&addr, &created.code, join("Mal", JoinRole::Facilitator, Some("nope"))).await;
    let reply = ws.next().await.unwrap().unwrap().into_text().unwrap().to_string();
    assert!(matches!(msg(&reply), ServerMessage::Error(e) if e.code == "unauthorized"));

    // Join, drop, resume: same participant, no new seat taken.
    let mut ws = connect_and_join(&addr, &created.code.to_lowercase(), join("Ana", JoinRole::Regular, None)).await;
    let mut viewer = None;
    while viewer.is_none() {
        let text = ws.next().await.unwrap().unwrap().into_text().unwrap().to_string();
        if let ServerMessage::Snapshot(s) = msg(&text) {
            viewer = Some(s.viewer.clone());
        }
    }
    let viewer = viewer.unwrap();
    ws.close(None).await.unwrap();
    let resume = JoinRequest { resume: Some(viewer.clone()), ..Default::default() };
    let mut ws = connect_and_join(&addr, &created.code, resume).await;
    let mut got = Vec::new();
    while got.len() < 2 {
        let text = ws.next().await.unwrap().unwrap().into_text().unwrap().to_string();
        got.push(msg(&text));
    }
    assert!(matches!(got[0], ServerMessage::Ack { reply_to: 1, .. }));
    match &got[1] {
        ServerMessage::Snapshot(s) => {
            assert_eq!(s.viewer, viewer);
            let lobby = s.lobby.as_ref().unwrap();
            assert_eq!((lobby.your_seat, lobby.needed), (1, 3));
            assert_eq!(lobby.names, ["Ana"]);
        }
        other => panic!("{other:?}"),
    }
}

fn msg(frame: &str) -> ServerMessage {
    ServerMessage::parse(frame).unwrap().1
}
