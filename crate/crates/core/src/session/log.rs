use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{JoinRole, PodId};
use crate::rules::{GameConfig, GameEvent, PlayerId};
use crate::study::Response;

pub const SYSTEM_ACTOR: &str = "system";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "snake_case")]
pub enum LogEvent {
    SessionCreated {
        seed: u64,
        pods: usize,
        config: GameConfig,
        facilitator_token_sha256: String,
    },
    PlayerJoined {
        player: PlayerId,
        name: String,
        role: JoinRole,
        pod: Option<PodId>,
        seat: Option<usize>,
    },
    Game(GameEvent),
    Questionnaire(Response),
}

/// One line of the session log. Field order is the serialization order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub ts: u64,
    pub session: String,
    pub pod: Option<PodId>,
    pub actor: String,
    pub event: LogEvent,
    pub state_hash: String,
}

impl EventRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }
}

#[derive(Debug, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct LogParseError {
    pub line: usize,
    pub message: String,
}

/// Parses JSONL, skipping blank lines. Line numbers are 1-based.
pub fn parse_log(text: &str) -> Result<Vec<EventRecord>, LogParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| LogParseError { line: i + 1, message: e.to_string() })
        })
        .collect()
}

pub fn write_jsonl(records: &[EventRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        out.extend_from_slice(r.to_line().as_bytes());
        out.push(b'\n');
    }
    out
}

/// Append-only file that is flushed after every record.
#[derive(Debug)]
pub struct LogSink {
    path: PathBuf,
    file: File,
}

impl LogSink {
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = std::fs::OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(LogSink { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &EventRecord) -> std::io::Result<()> {
        let mut line = record.to_line();
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.file.sync_data()
    }
}
