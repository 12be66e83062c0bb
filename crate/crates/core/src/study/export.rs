//! Research bundle: CSV tables derived purely from a session log.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::rules::{
    validate_prompt, word_limit_for_round, GameConfig, GameKind, GameState, PlayerId, PromptDraft,
    RoundDetail, Side, Verdict,
};
use crate::session::{parse_log, EventRecord, LogEvent, LogParseError, ReplayError, Session};

use super::{instrument_items, merge_flag, merge_likert, ChoiceOption, ItemKind};

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error(transparent)]
    Parse(#[from] LogParseError),
    #[error("log does not replay: {0}")]
    Replay(#[from] ReplayError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResearchBundle {
    pub responses_csv: Vec<u8>,
    pub open_responses_csv: Vec<u8>,
    pub prompts_csv: Vec<u8>,
    pub votes_csv: Vec<u8>,
    pub session_jsonl: Vec<u8>,
}

/// Pseudonyms P01, P02, ... in join order.
fn pseudonyms(records: &[EventRecord]) -> BTreeMap<PlayerId, String> {
    let mut out = BTreeMap::new();
    for r in records {
        if let LogEvent::PlayerJoined { player, .. } = &r.event {
            let n = out.len() + 1;
            out.entry(player.clone()).or_insert_with(|| format!("P{n:02}"));
        }
    }
    out
}

fn verdict_text(v: &Verdict) -> String {
    match v {
        Verdict::Valid => "valid".into(),
        Verdict::TooManyWords(n) => format!("too_many_words:{n}"),
        Verdict::BannedWord(w) => format!("banned_word:{w}"),
    }
}

fn side_text(side: Option<Side>) -> &'static str {
    match side {
        Some(Side::A) => "A",
        Some(Side::B) => "B",
        None => "",
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, ExportError> {
    w.into_inner().map_err(|e| ExportError::Csv(e.into_error().into()))
}

fn prompt_limit(config: &GameConfig, round: usize) -> usize {
    match config.kind {
        GameKind::DiversityDuel => word_limit_for_round(config, round).unwrap_or(usize::MAX),
        GameKind::SecretAgent => config.relay_budget(),
    }
}

impl ResearchBundle {
    pub fn from_jsonl(text: &str) -> Result<Self, ExportError> {
        Self::from_records(&parse_log(text)?)
    }

    pub fn from_records(records: &[EventRecord]) -> Result<Self, ExportError> {
        let session = Session::replay(records)?;
        let names = pseudonyms(records);
        let alias = |p: &PlayerId| names.get(p).cloned().unwrap_or_else(|| "unknown".into());

        let mut responses = crate::csv_writer(Vec::new());
        responses.write_record(["participant", "game", "stage", "item", "answer", "bucket", "merge_flag"])?;
        let mut open = crate::csv_writer(Vec::new());
        open.write_record(["participant", "game", "stage", "item", "answer"])?;
        for r in session.responses() {
            let items = instrument_items(r.game);
            for a in &r.answers {
                match items.iter().find(|i| i.id == a.item).map(|i| &i.kind) {
                    Some(ItemKind::SingleChoice { .. }) => {
                        let option = ChoiceOption::parse(&a.answer).expect("validated when logged");
                        responses.write_record([
                            alias(&r.participant).as_str(),
                            r.game.as_str(),
                            r.stage.as_str(),
                            &a.item,
                            option.label(),
                            merge_likert(option).as_str(),
                            merge_flag(option),
                        ])?;
                    }
                    _ => open.write_record([
                        alias(&r.participant).as_str(),
                        r.game.as_str(),
                        r.stage.as_str(),
                        &a.item,
                        &a.answer,
                    ])?,
                }
            }
        }

        let mut prompts = crate::csv_writer(Vec::new());
        prompts.write_record(["pod", "round", "category", "pair", "attempt", "authorship", "prompt", "verdict", "digest"])?;
        let mut votes = crate::csv_writer(Vec::new());
        votes.write_record(["pod", "round", "ballot", "tally", "verdict", "detail"])?;
        for (pod, game) in session.games() {
            write_game(*pod, game, &mut prompts, &mut votes)?;
        }

        Ok(ResearchBundle {
            responses_csv: finish(responses)?,
            open_responses_csv: finish(open)?,
            prompts_csv: finish(prompts)?,
            votes_csv: finish(votes)?,
            session_jsonl: session.export_log(),
        })
    }

    pub fn files(&self) -> [(&'static str, &[u8]); 5] {
        [
            ("responses.csv", &self.responses_csv),
            ("open_responses.csv", &self.open_responses_csv),
            ("prompts.csv", &self.prompts_csv),
            ("votes.csv", &self.votes_csv),
            ("session.jsonl", &self.session_jsonl),
        ]
    }

    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>, ExportError> {
        std::fs::create_dir_all(dir).map_err(|source| ExportError::Io { path: dir.to_path_buf(), source })?;
        let mut written = Vec::new();
        for (name, bytes) in self.files() {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|source| ExportError::Io { path: path.clone(), source })?;
            written.push(path);
        }
        Ok(written)
    }
}

fn prompt_row(
    prompts: &mut csv::Writer<Vec<u8>>,
    pod: u32,
    game: &GameState,
    round: usize,
    category: &str,
    side: Option<Side>,
    attempt: usize,
    draft: &PromptDraft,
    digest: Option<&str>,
) -> Result<(), ExportError> {
    let verdict = validate_prompt(draft, prompt_limit(&game.config, round), &game.config.ban_list);
    prompts.write_record([
        pod.to_string().as_str(),
        &round.to_string(),
        category,
        side_text(side),
        &attempt.to_string(),
        &draft.authorship(|p| game.seat_of(p)),
        &draft.prompt_text(),
        &verdict_text(&verdict),
        digest.unwrap_or(""),
    ])?;
    Ok(())
}

fn write_game(
    pod: u32,
    game: &GameState,
    prompts: &mut csv::Writer<Vec<u8>>,
    votes: &mut csv::Writer<Vec<u8>>,
) -> Result<(), ExportError> {
    let seat = |p: &PlayerId| game.seat_of(p).map_or("?".to_string(), |s| format!("seat{}", s + 1));
    for summary in &game.history {
        let round = summary.round;
        let pod_s = pod.to_string();
        let round_s = round.to_string();
        match &summary.detail {
            RoundDetail::Duel { attempts, tally, revoted, winner, .. } => {
                for (side, list) in attempts {
                    for (i, a) in list.iter().enumerate() {
                        let digest = a.image.as_ref().map(|img| img.digest.as_str());
                        prompt_row(prompts, pod, game, round, &summary.category, Some(*side), i, &a.prompt, digest)?;
                    }
                }
                let verdict = match winner {
                    Some(s) => side_text(Some(*s)),
                    None => "tie",
                };
                votes.write_record([
                    pod_s.as_str(),
                    &round_s,
                    "image_vote",
                    &format!("A={};B={}", tally.a, tally.b),
                    verdict,
                    if *revoted { "revoted" } else { "" },
                ])?;
            }
            RoundDetail::Relay { prompt, image, verdict, accusation, agent, outcome } => {
                let digest = image.as_ref().map(|i| i.digest.as_str());
                prompt_row(prompts, pod, game, round, &summary.category, None, 0, prompt, digest)?;
                votes.write_record([
                    pod_s.as_str(),
                    &round_s,
                    "evaluation",
                    &format!(
                        "represents={}/{};diverse={}/{}",
                        verdict.represents_votes.yes,
                        verdict.represents_votes.no,
                        verdict.diverse_votes.yes,
                        verdict.diverse_votes.no
                    ),
                    &format!("represents={};inclusive={}", yes_no(verdict.represents), yes_no(verdict.inclusive)),
                    if verdict.has_tie() { "tie_fails" } else { "" },
                ])?;
                let tally: Vec<String> = accusation.counts.iter().map(|(p, n)| format!("{}={n}", seat(p))).collect();
                let accused = accusation.verdict.as_ref().map_or("none".to_string(), seat);
                votes.write_record([
                    pod_s.as_str(),
                    &round_s,
                    "accusation",
                    &tally.join(";"),
                    &accused,
                    &format!(
                        "agent={};{};{}",
                        seat(agent),
                        if accusation.detected { "detected" } else { "undetected" },
                        serde_json::to_value(outcome.value).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
                    ),
                ])?;
            }
        }
    }
    Ok(())
}
