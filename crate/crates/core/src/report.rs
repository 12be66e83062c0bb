//! Offline report over session logs and standalone questionnaire datasets.
//!
//! Input files are JSONL. Each line is one of:
//! - a session log record (`{"seq": .., "event": ..}`), possibly many sessions back to back;
//! - a questionnaire response (`{"participant": .., "game": .., "stage": .., "answers": [..]}`);
//! - a `{"header": ..}` line, ignored, for dataset notes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::imagegen::Lexicon;
use crate::rules::GameKind;
use crate::session::{EventRecord, Session};
use crate::sim::{record_history, GameRun, SimSummary};
use crate::study::{headline_item, headline_prompt, summarize_shifts, validate_response, Response, Stage, ShiftTable};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{}:{line}: {message}", path.display())]
pub struct ReportError {
    pub path: PathBuf,
    /// 1-based; 0 for whole-file problems.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct ReportData {
    pub responses: Vec<Response>,
    pub sessions: Vec<Session>,
}

impl ReportData {
    /// Parses one file's contents, stopping at the first bad line.
    pub fn add_text(&mut self, path: &Path, text: &str) -> Result<(), ReportError> {
        let fail = |line: usize, message: String| ReportError { path: path.to_path_buf(), line, message };
        // (first line number, records) for each session in the file
        let mut logs: Vec<(usize, Vec<EventRecord>)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let value: Value = serde_json::from_str(raw).map_err(|e| fail(line, e.to_string()))?;
            let Some(obj) = value.as_object() else {
                return Err(fail(line, "expected a JSON object".into()));
            };
            if obj.contains_key("header") {
                continue;
            }
            if obj.contains_key("seq") {
                let record: EventRecord = serde_json::from_value(value).map_err(|e| fail(line, e.to_string()))?;
                match logs.last_mut() {
                    Some((_, records)) if record.seq != 0 => records.push(record),
                    _ => logs.push((line, vec![record])),
                }
            } else if obj.contains_key("participant") {
                let response: Response = serde_json::from_value(value).map_err(|e| fail(line, e.to_string()))?;
                validate_response(&response).map_err(|e| fail(line, e.to_string()))?;
                self.responses.push(response);
            } else {
                return Err(fail(line, "neither a log record nor a questionnaire response".into()));
            }
        }
        for (line, records) in logs {
            let session = Session::replay(&records).map_err(|e| fail(line, format!("session does not replay: {e}")))?;
            self.responses.extend(session.responses().iter().cloned());
            self.sessions.push(session);
        }
        Ok(())
    }

    pub fn add_file(&mut self, path: &Path) -> Result<(), ReportError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ReportError { path: path.to_path_buf(), line: 0, message: e.to_string() })?;
        self.add_text(path, &text)
    }

    pub fn load(paths: &[PathBuf]) -> Result<ReportData, ReportError> {
        let mut data = ReportData::default();
        for p in paths {
            data.add_file(p)?;
        }
        Ok(data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSection {
    pub game: GameKind,
    pub prompt: String,
    /// `Err` carries why no table could be built, e.g. a stage with no answers.
    pub table: Result<ShiftTable, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub shifts: Vec<ShiftSection>,
    pub games: Vec<SimSummary>,
}

impl Report {
    pub fn build(data: &ReportData, lexicon: &Lexicon) -> Report {
        let mut shifts = Vec::new();
        for game in [GameKind::DiversityDuel, GameKind::SecretAgent] {
            let of = |stage| data.responses.iter().filter(|r| r.game == game && r.stage == stage).collect::<Vec<_>>();
            let (pre, post) = (of(Stage::Pre), of(Stage::Post));
            if pre.is_empty() && post.is_empty() {
                continue;
            }
            let table = summarize_shifts(&pre, &post, headline_item(game)).map_err(|e| e.to_string());
            shifts.push(ShiftSection { game, prompt: headline_prompt(game), table });
        }

        let mut games = Vec::new();
        for kind in [GameKind::DiversityDuel, GameKind::SecretAgent] {
            let runs: Vec<GameRun> = data
                .sessions
                .iter()
                .flat_map(|s| s.games().values())
                .filter(|g| g.kind() == kind)
                .enumerate()
                .map(|(index, game)| {
                    let mut run = GameRun { index, seed: game.seed, ..GameRun::default() };
                    record_history(game, lexicon, &mut run);
                    run
                })
                .collect();
            if !runs.is_empty() {
                let mut summary = SimSummary::aggregate(kind, "logs", 0, &runs);
                summary.records = data.sessions.iter().filter(|s| s.config().kind == kind).map(|s| s.records().len()).sum();
                games.push(summary);
            }
        }
        Report { shifts, games }
    }

    pub fn to_text(&self) -> String {
        let mut t = String::new();
        for s in &self.shifts {
            let _ = writeln!(t, "{} questionnaire: {}", s.game.as_str(), s.prompt);
            match &s.table {
                Ok(table) => {
                    let _ = writeln!(t, "  {:<6}{:>7}{:>9}{:>10}{:>7}", "stage", "agree", "neutral", "disagree", "total");
                    for (stage, c) in [("pre", &table.pre), ("post", &table.post)] {
                        let _ = writeln!(
                            t,
                            "  {:<6}{:>7}{:>9}{:>10}{:>7}",
                            stage,
                            c.agree,
                            c.neutral,
                            c.disagree,
                            c.total()
                        );
                    }
                    let p = &table.paired;
                    let _ = writeln!(
                        t,
                        "  paired {}: toward disagree {}, away {}, unchanged {}",
                        p.increased + p.decreased + p.unchanged,
                        p.increased,
                        p.decreased,
                        p.unchanged
                    );
                    if !table.anomalies.is_empty() {
                        let ids: Vec<&str> = table.anomalies.iter().map(|p| p.as_str()).collect();
                        let _ = writeln!(t, "  post without pre: {}", ids.join(", "));
                    }
                }
                Err(e) => {
                    let _ = writeln!(t, "  no table: {e}");
                }
            }
            t.push('\n');
        }
        for g in &self.games {
            let _ = writeln!(t, "{} games from logs", g.game.as_str());
            for line in g.to_table().lines().filter(|l| !l.starts_with("profile") && !l.starts_with("seed")) {
                let _ = writeln!(t, "  {line}");
            }
            t.push('\n');
        }
        if self.shifts.is_empty() && self.games.is_empty() {
            t.push_str("no questionnaire responses or games found\n");
        }
        t
    }

    /// `game,item,stage,agree,neutral,disagree,total`
    pub fn shifts_csv(&self) -> Vec<u8> {
        let mut w = crate::csv_writer(Vec::new());
        w.write_record(["game", "item", "stage", "agree", "neutral", "disagree", "total"]).expect("in-memory csv");
        for s in &self.shifts {
            if let Ok(table) = &s.table {
                for (stage, c) in [("pre", &table.pre), ("post", &table.post)] {
                    let n = [c.agree, c.neutral, c.disagree, c.total()].map(|v| v.to_string());
                    w.write_record([s.game.as_str(), &table.item, stage, &n[0], &n[1], &n[2], &n[3]]).expect("in-memory csv");
                }
            }
        }
        w.into_inner().expect("in-memory csv")
    }

    /// `game,metric,value`
    pub fn games_csv(&self) -> Vec<u8> {
        let mut w = crate::csv_writer(Vec::new());
        w.write_record(["game", "metric", "value"]).expect("in-memory csv");
        for g in &self.games {
            let csv = g.to_csv();
            let mut r = csv::Reader::from_reader(csv.as_slice());
            for row in r.records().map_while(Result::ok) {
                w.write_record([g.game.as_str(), &row[0], &row[1]]).expect("in-memory csv");
            }
        }
        w.into_inner().expect("in-memory csv")
    }
}
