//! Wire envelope `{ "v": 1, "type", "seq", "payload" }` and message bodies.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::view::{ResultView, RoundView, Snapshot};
use super::{JoinRole, PodId};
use crate::rules::{GameKind, Override, PlayerId, Side, Verdict};
use crate::study::{Answer, Stage};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub v: u32,
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub seq: u64,
    #[serde(default = "empty_object")]
    pub payload: Value,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct JoinRequest {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub role: JoinRole,
    #[serde(default)]
    pub token: Option<String>,
    /// A previously issued player id; resumes instead of joining again.
    #[serde(default)]
    pub resume: Option<PlayerId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientMessage {
    Join(JoinRequest),
    Ready,
    DrawCard,
    SubmitWords { text: String, submit: bool },
    RequestAttempt { text: String },
    SelectImage { attempt: u32 },
    CastImageVote { choice: Side },
    CastEvalVote { pod: Option<PodId>, represents: bool, diverse: bool },
    CastAccusation { seat: usize },
    QuestionnaireResponse { game: GameKind, stage: Stage, answers: Vec<Answer> },
    FacilitatorOverride { pod: PodId, action: Override },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ProtocolError(pub String);

#[derive(Deserialize)]
struct Words {
    text: String,
    #[serde(default = "yes")]
    submit: bool,
}

#[derive(Deserialize)]
struct AttemptText {
    #[serde(default)]
    text: String,
}

#[derive(Deserialize)]
struct Select {
    attempt: u32,
}

#[derive(Deserialize)]
struct ImageVote {
    choice: Side,
}

#[derive(Deserialize)]
struct EvalVote {
    #[serde(default)]
    pod: Option<PodId>,
    represents: bool,
    diverse: bool,
}

#[derive(Deserialize)]
struct Accuse {
    seat: usize,
}

#[derive(Deserialize)]
struct Questionnaire {
    game: GameKind,
    stage: Stage,
    answers: Vec<Answer>,
}

#[derive(Deserialize)]
struct FacilitatorAction {
    pod: PodId,
    #[serde(flatten)]
    action: Override,
}

fn body<T: DeserializeOwned>(kind: &str, payload: Value) -> Result<T, ProtocolError> {
    serde_json::from_value(payload).map_err(|e| ProtocolError(format!("bad {kind} payload: {e}")))
}

impl ClientMessage {
    /// Parses a raw frame into its envelope sequence number and message.
    pub fn parse(raw: &str) -> Result<(u64, ClientMessage), ProtocolError> {
        let envelope: Envelope =
            serde_json::from_str(raw).map_err(|e| ProtocolError(format!("malformed envelope: {e}")))?;
        if envelope.v != PROTOCOL_VERSION {
            return Err(ProtocolError(format!("unsupported protocol version {}", envelope.v)));
        }
        let seq = envelope.seq;
        Ok((seq, Self::from_envelope(envelope)?))
    }

    pub fn from_envelope(envelope: Envelope) -> Result<ClientMessage, ProtocolError> {
        let Envelope { kind, payload, .. } = envelope;
        let k = kind.as_str();
        Ok(match k {
            "join" => ClientMessage::Join(body(k, payload)?),
            "ready" => ClientMessage::Ready,
            "draw_card" => ClientMessage::DrawCard,
            "submit_words" => {
                let w: Words = body(k, payload)?;
                ClientMessage::SubmitWords { text: w.text, submit: w.submit }
            }
            "request_attempt" => ClientMessage::RequestAttempt { text: body::<AttemptText>(k, payload)?.text },
            "select_image" => ClientMessage::SelectImage { attempt: body::<Select>(k, payload)?.attempt },
            "cast_image_vote" => ClientMessage::CastImageVote { choice: body::<ImageVote>(k, payload)?.choice },
            "cast_eval_vote" => {
                let e: EvalVote = body(k, payload)?;
                ClientMessage::CastEvalVote { pod: e.pod, represents: e.represents, diverse: e.diverse }
            }
            "cast_accusation" => ClientMessage::CastAccusation { seat: body::<Accuse>(k, payload)?.seat },
            "questionnaire_response" => {
                let q: Questionnaire = body(k, payload)?;
                ClientMessage::QuestionnaireResponse { game: q.game, stage: q.stage, answers: q.answers }
            }
            "facilitator_override" => {
                let f: FacilitatorAction = body(k, payload)?;
                ClientMessage::FacilitatorOverride { pod: f.pod, action: f.action }
            }
            other => return Err(ProtocolError(format!("unknown message type \"{other}\""))),
        })
    }

    pub fn to_envelope(&self, seq: u64) -> Envelope {
        let (kind, payload) = match self {
            ClientMessage::Join(j) => ("join", serde_json::to_value(j).expect("serializes")),
            ClientMessage::Ready => ("ready", empty_object()),
            ClientMessage::DrawCard => ("draw_card", empty_object()),
            ClientMessage::SubmitWords { text, submit } => {
                ("submit_words", serde_json::json!({ "text": text, "submit": submit }))
            }
            ClientMessage::RequestAttempt { text } => ("request_attempt", serde_json::json!({ "text": text })),
            ClientMessage::SelectImage { attempt } => ("select_image", serde_json::json!({ "attempt": attempt })),
            ClientMessage::CastImageVote { choice } => ("cast_image_vote", serde_json::json!({ "choice": choice })),
            ClientMessage::CastEvalVote { pod, represents, diverse } => (
                "cast_eval_vote",
                serde_json::json!({ "pod": pod, "represents": represents, "diverse": diverse }),
            ),
            ClientMessage::CastAccusation { seat } => ("cast_accusation", serde_json::json!({ "seat": seat })),
            ClientMessage::QuestionnaireResponse { game, stage, answers } => (
                "questionnaire_response",
                serde_json::json!({ "game": game, "stage": stage, "answers": answers }),
            ),
            ClientMessage::FacilitatorOverride { pod, action } => {
                let mut v = serde_json::to_value(action).expect("serializes");
                v["pod"] = serde_json::json!(pod);
                ("facilitator_override", v)
            }
        };
        Envelope { v: PROTOCOL_VERSION, kind: kind.into(), seq, payload }
    }

    pub fn to_json(&self, seq: u64) -> String {
        serde_json::to_string(&self.to_envelope(seq)).expect("serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    /// Sequence number of the client message being rejected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_to: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ServerMessage {
    Snapshot(Box<Snapshot>),
    Ack { reply_to: u64, record: u64 },
    Error(ErrorBody),
    ImageReady { pod: PodId, pair: Option<Side>, attempt: u32, digest: String },
    Reveal { pod: PodId, round: usize, agent_seat: usize, agent_name: String },
    RoundResult { pod: PodId, result: RoundView },
    GameResult { pod: PodId, result: ResultView },
}

impl ServerMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            ServerMessage::Snapshot(_) => "snapshot",
            ServerMessage::Ack { .. } => "ack",
            ServerMessage::Error(_) => "error",
            ServerMessage::ImageReady { .. } => "image_ready",
            ServerMessage::Reveal { .. } => "reveal",
            ServerMessage::RoundResult { .. } => "round_result",
            ServerMessage::GameResult { .. } => "game_result",
        }
    }

    pub fn to_envelope(&self, seq: u64) -> Envelope {
        let mut tagged = serde_json::to_value(self).expect("server messages serialize");
        let payload = tagged.get_mut("payload").map(Value::take).unwrap_or_else(empty_object);
        Envelope { v: PROTOCOL_VERSION, kind: self.kind().into(), seq, payload }
    }

    pub fn to_json(&self, seq: u64) -> String {
        serde_json::to_string(&self.to_envelope(seq)).expect("serializes")
    }

    pub fn from_envelope(envelope: Envelope) -> Result<ServerMessage, ProtocolError> {
        let tagged = serde_json::json!({ "type": envelope.kind, "payload": envelope.payload });
        serde_json::from_value(tagged).map_err(|e| ProtocolError(e.to_string()))
    }

    pub fn parse(raw: &str) -> Result<(u64, ServerMessage), ProtocolError> {
        let envelope: Envelope = serde_json::from_str(raw).map_err(|e| ProtocolError(e.to_string()))?;
        let seq = envelope.seq;
        Ok((seq, Self::from_envelope(envelope)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_ignored_unknown_type_rejected() {
        let raw = r#"{"v":1,"type":"submit_words","seq":4,"payload":{"text":"a b","extra":true},"x":1}"#;
        let (seq, msg) = ClientMessage::parse(raw).unwrap();
        assert_eq!(seq, 4);
        assert_eq!(msg, ClientMessage::SubmitWords { text: "a b".into(), submit: true });
        assert!(ClientMessage::parse(r#"{"v":1,"type":"dance","seq":1,"payload":{}}"#).is_err());
        assert!(ClientMessage::parse(r#"{"v":2,"type":"ready","seq":1}"#).is_err());
        assert!(ClientMessage::parse("{").is_err());
    }

    #[test]
    fn client_round_trip() {
        let msgs = [
            ClientMessage::Ready,
            ClientMessage::CastImageVote { choice: Side::B },
            ClientMessage::CastEvalVote { pod: Some(1), represents: true, diverse: false },
            ClientMessage::FacilitatorOverride { pod: 0, action: Override::ExtendDeadline { seconds: 30 } },
            ClientMessage::FacilitatorOverride { pod: 2, action: Override::ForceExpire },
            ClientMessage::Join(JoinRequest { name: "Ana".into(), ..Default::default() }),
        ];
        for m in msgs {
            let (_, back) = ClientMessage::parse(&m.to_json(9)).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn server_envelope_round_trip() {
        let m = ServerMessage::Ack { reply_to: 3, record: 12 };
        let json = m.to_json(3);
        assert!(json.starts_with(r#"{"v":1,"type":"ack","seq":3,"payload":"#));
        assert_eq!(ServerMessage::parse(&json).unwrap().1, m);
    }
}
