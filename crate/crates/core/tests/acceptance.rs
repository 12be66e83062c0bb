//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any fail. Tolerances live in the constants below.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::{Duration, Instant};

use biasgames_core::imagegen::{Lexicon, StubBackend};
use biasgames_core::report::{Report, ReportData};
use biasgames_core::rules::{
    assign_secret_agent, score_agent, tally_accusation, tally_image_votes, tokenize,
    validate_text, AccusationRule, BanList, GameConfig, GameKind, ImageVoteOutcome, OutcomeValue, PlayerId,
    Side, Verdict, CAPTION_LIMITS, CAPTION_PROMPTS,
};
use biasgames_core::session::{parse_log, Session};
use biasgames_core::sim::{simulate, simulate_one, Profile, SimOptions};

const FAST: Duration = Duration::from_secs(1);
const SIM_GAMES: usize = 1000;
const SIM_BUDGET: Duration = Duration::from_secs(60);
const SIM_SEED: u64 = 20_240_611;
const FUZZ_GAMES: usize = 100;
const UNIFORM_SEEDS: u64 = 10_000;
const UNIFORM_TOLERANCE: f64 = 0.02;
const STUB_PAIRS: usize = 1000;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pod() -> Vec<PlayerId> {
    (1..=4).map(|i| PlayerId::new(format!("p{i}"))).collect()
}

fn scoring_matrix() -> Check {
    let start = Instant::now();
    let expected = [
        ((false, false), OutcomeValue::FullWin),
        ((false, true), OutcomeValue::PartialWin),
        ((true, false), OutcomeValue::PartialWin),
        ((true, true), OutcomeValue::Loss),
    ];
    for ((inclusive, detected), want) in expected {
        let got = score_agent(inclusive, detected);
        ensure(got.value == want, || format!("inclusive={inclusive} detected={detected}: {:?}", got.value))?;
    }
    let t = start.elapsed();
    ensure(t < FAST, || format!("took {t:?}"))?;
    Ok(format!("4/4 cases in {t:?}"))
}

fn rule_constants() -> Check {
    let dd = GameConfig::diversity_duel();
    let sa = GameConfig::secret_agent();
    let got = (dd.word_limits.clone(), dd.compose_seconds, sa.turn_seconds, sa.words_per_turn, dd.max_attempts, dd.rounds, sa.rounds);
    let want = (vec![6, 5, 4], 45, 30, 2, 2, 3, 2);
    ensure(got == want, || format!("{got:?} != {want:?}"))?;
    Ok("limits 6/5/4, compose 45s, turn 30s, 2 words/turn, 2 attempts, 3 and 2 rounds".into())
}

/// Brute-force winner: the unique maximum, if any.
fn unique_max(counts: &BTreeMap<usize, u32>) -> Option<usize> {
    let top = *counts.values().max()?;
    let at_top: Vec<usize> = counts.iter().filter(|(_, &c)| c == top).map(|(&k, _)| k).collect();
    (at_top.len() == 1).then(|| at_top[0])
}

fn vote_tally_oracle() -> Check {
    let start = Instant::now();
    let voters = pod();
    let mut image_cases = 0;
    for mask in 0u32..16 {
        let ballot: Vec<(PlayerId, Side)> = (0..4)
            .map(|i| (voters[i].clone(), if mask >> i & 1 == 1 { Side::B } else { Side::A }))
            .collect();
        let b = mask.count_ones();
        let a = 4 - b;
        let want = match a.cmp(&b) {
            std::cmp::Ordering::Greater => ImageVoteOutcome::AWins,
            std::cmp::Ordering::Less => ImageVoteOutcome::BWins,
            std::cmp::Ordering::Equal => ImageVoteOutcome::Tie,
        };
        let got = tally_image_votes(&voters, &ballot).map_err(|e| e.to_string())?;
        ensure((got.a, got.b, got.outcome) == (a, b, want), || format!("image ballot {mask:04b}: {got:?}"))?;
        image_cases += 1;
    }

    let mut accusation_cases = 0;
    for rule in [AccusationRule::Plurality, AccusationRule::StrictMajority] {
        for code in 0u32..256 {
            let targets: Vec<usize> = (0..4).map(|i| (code >> (2 * i) & 3) as usize).collect();
            let ballot: Vec<(PlayerId, PlayerId)> =
                (0..4).map(|i| (voters[i].clone(), voters[targets[i]].clone())).collect();
            let mut counts = BTreeMap::new();
            for &t in &targets {
                *counts.entry(t).or_insert(0u32) += 1;
            }
            let want = match rule {
                AccusationRule::Plurality => unique_max(&counts),
                AccusationRule::StrictMajority => counts.iter().find(|(_, &c)| c >= 3).map(|(&k, _)| k),
            };
            for agent in 0..4 {
                let got = tally_accusation(&voters, &ballot, &voters[agent], rule).map_err(|e| e.to_string())?;
                let verdict = got.verdict.map(|p| voters.iter().position(|v| *v == p).unwrap());
                let detected = want == Some(agent);
                ensure(verdict == want && got.detected == detected, || {
                    format!("{rule:?} ballot {targets:?} agent {agent}: {verdict:?}/{} want {want:?}/{detected}", got.detected)
                })?;
                let got_counts: BTreeMap<usize, u32> =
                    got.counts.iter().map(|(p, &c)| (voters.iter().position(|v| v == p).unwrap(), c)).collect();
                ensure(got_counts == counts, || format!("counts {got_counts:?} != {counts:?}"))?;
            }
            accusation_cases += 1;
        }
    }
    let t = start.elapsed();
    ensure(t < FAST, || format!("took {t:?}"))?;
    Ok(format!("{image_cases} image ballots, {accusation_cases} accusation ballots x 4 agents, {t:?}"))
}

fn shift_tables() -> Check {
    // Cells stated in the findings text, (agree, neutral, disagree).
    let stated: [(GameKind, &str, (usize, usize, usize)); 4] = [
        (GameKind::DiversityDuel, "pre", (10, 5, 1)),
        (GameKind::DiversityDuel, "post", (5, 4, 7)),
        (GameKind::SecretAgent, "pre", (0, 9, 7)),
        (GameKind::SecretAgent, "post", (1, 2, 13)),
    ];
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/figure3_sample.jsonl");
    let data = ReportData::load(&[path]).map_err(|e| e.to_string())?;
    let report = Report::build(&data, &Lexicon::builtin());
    let text = report.to_text();

    // Read the printed tables back, independent of the report's structs.
    let mut printed: BTreeMap<(String, String), (usize, usize, usize)> = BTreeMap::new();
    let mut game = String::new();
    for line in text.lines() {
        if let Some((g, _)) = line.split_once(" questionnaire:") {
            game = g.to_string();
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() == 5 && (cols[0] == "pre" || cols[0] == "post") {
            let n: Vec<usize> = cols[1..].iter().map(|c| c.parse().unwrap_or(usize::MAX)).collect();
            ensure(n[0] + n[1] + n[2] == n[3], || format!("row does not add up: {line}"))?;
            printed.insert((game.clone(), cols[0].to_string()), (n[0], n[1], n[2]));
        }
    }
    for (kind, stage, want) in stated {
        let got = printed.get(&(kind.as_str().to_string(), stage.to_string()));
        ensure(got == Some(&want), || format!("{} {stage}: printed {got:?}, stated {want:?}\n{text}", kind.as_str()))?;
    }
    Ok("DD {10,5,1} -> {5,4,7}, SA {0,9,7} -> {1,2,13}".into())
}

/// Whitespace split, edge punctuation trimmed, lowercase.
fn oracle_count(text: &str) -> usize {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .count()
}

fn validation_vectors() -> Check {
    let ban = BanList::default();
    let mut counts = Vec::new();
    let stated_counts = [4, 6, 5, 16];
    for (((text, stated), limit), pinned) in CAPTION_PROMPTS.iter().zip(CAPTION_LIMITS).zip(stated_counts) {
        ensure(*stated == pinned, || format!("{text:?}: table says {stated}, expected {pinned}"))?;
        let n = tokenize(text).len();
        ensure(n == *stated && oracle_count(text) == *stated, || format!("{text:?}: {n} tokens, stated {stated}"))?;
        let verdict = validate_text(text, limit.unwrap_or(usize::MAX), &ban);
        ensure(verdict == Verdict::Valid, || format!("{text:?} at {limit:?}: {verdict:?}"))?;
        if let Some(l) = limit {
            let over = validate_text(text, l - 1, &ban);
            ensure(over == Verdict::TooManyWords(n), || format!("{text:?} at {}: {over:?}", l - 1))?;
        }
        counts.push(n.to_string());
    }
    Ok(format!("{} words, valid at 4/6/5/any, rejected one under", counts.join("/")))
}

fn replay_determinism() -> Check {
    let mut opts = SimOptions::new(GameConfig::secret_agent(), SIM_SEED, SIM_GAMES, Profile::parse("default")?);
    opts.workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(8);
    let start = Instant::now();
    let result = simulate(&opts).map_err(|e| e.to_string())?;
    let t = start.elapsed();
    let s = &result.summary;
    ensure(s.games == SIM_GAMES, || format!("{} games", s.games))?;
    ensure(s.violations.is_empty(), || format!("{} violations, first: {}", s.violations.len(), s.violations[0]))?;
    ensure(s.agent_rounds == 2 * SIM_GAMES, || format!("{} agent rounds", s.agent_rounds))?;
    // Every log replays from the bytes alone.
    for run in &result.runs {
        let records = parse_log(std::str::from_utf8(&run.log).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        Session::replay(&records).map_err(|e| format!("game {}: {e}", run.index))?;
    }
    ensure(t < SIM_BUDGET, || format!("took {t:?}"))?;

    let mut serial = opts.clone();
    serial.workers = 1;
    let rerun: Vec<usize> = (0..SIM_GAMES).step_by(37).chain([SIM_GAMES - 1]).collect();
    for &i in &rerun {
        let again = simulate_one(&serial, i);
        ensure(again.log == result.runs[i].log, || format!("game {i} log differs on rerun"))?;
    }
    Ok(format!("{SIM_GAMES} games, 0 violations, {} logs byte-identical on rerun, {t:?} with {} workers", rerun.len(), opts.workers))
}

fn redaction_fuzz() -> Check {
    let mut opts = SimOptions::new(GameConfig::secret_agent(), SIM_SEED ^ 0xA6E7, FUZZ_GAMES, Profile::parse("all-random")?);
    opts.capture_snapshots = true;
    opts.workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(8);
    let result = simulate(&opts).map_err(|e| e.to_string())?;
    let s = &result.summary;
    ensure(s.violations.is_empty(), || format!("violation: {}", s.violations[0]))?;
    ensure(s.leaks == 0, || format!("{} leaks in outbound traffic", s.leaks))?;
    ensure(s.messages_checked > 0, || "nothing was scanned".into())?;

    // Independent pass: rebuild the session at every log prefix and render
    // every unprivileged participant's view while an agent is still hidden.
    let mut views = 0usize;
    for run in &result.runs {
        let records = parse_log(std::str::from_utf8(&run.log).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let full = Session::replay(&records).map_err(|e| e.to_string())?;
        let facilitators: BTreeSet<PlayerId> = full
            .participants()
            .filter(|p| p.role == biasgames_core::session::JoinRole::Facilitator)
            .map(|p| p.id.clone())
            .collect();
        for k in 1..=records.len() {
            let session = Session::replay(&records[..k]).map_err(|e| e.to_string())?;
            let hidden: Vec<PlayerId> = session
                .games()
                .values()
                .filter(|g| !g.agent_revealed)
                .filter_map(|g| g.agent.clone())
                .collect();
            if hidden.is_empty() {
                continue;
            }
            for p in session.participants().filter(|p| !facilitators.contains(&p.id)) {
                let json = serde_json::to_string(&session.snapshot(&p.id).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
                views += 1;
                for agent in &hidden {
                    ensure(*agent == p.id || !json.contains(agent.as_str()), || {
                        format!("game {} record {k}: agent {agent} visible to {}", run.index, p.id)
                    })?;
                }
            }
        }
    }
    Ok(format!("{FUZZ_GAMES} games, {} messages and {views} prefix snapshots, 0 leaks", s.messages_checked))
}

fn uniformity() -> Check {
    let players = pod();
    let mut hits = [0u64; 4];
    for seed in 0..UNIFORM_SEEDS {
        let agent = assign_secret_agent(&players, seed).map_err(|e| e.to_string())?;
        hits[players.iter().position(|p| *p == agent).unwrap()] += 1;
    }
    let shares: Vec<f64> = hits.iter().map(|&h| h as f64 / UNIFORM_SEEDS as f64).collect();
    for (i, s) in shares.iter().enumerate() {
        ensure((s - 0.25).abs() <= UNIFORM_TOLERANCE, || format!("seat {} at {:.2}%", i + 1, s * 100.0))?;
    }
    let pct: Vec<String> = shares.iter().map(|s| format!("{:.2}%", s * 100.0)).collect();
    Ok(format!("{UNIFORM_SEEDS} seeds: {}", pct.join(" ")))
}

fn stub_determinism() -> Check {
    let words = ["nurses", "older", "wheelchair", "smiling", "women", "construction", "workers", "hijab", "young", "pilots", "men", "white"];
    let pairs: Vec<(String, u64)> = (0..STUB_PAIRS)
        .map(|i| {
            let n = 1 + i % 6;
            let prompt: Vec<&str> = (0..n).map(|j| words[(i * 7 + j * 5) % words.len()]).collect();
            (prompt.join(" "), (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        })
        .collect();
    let run = || {
        let stub = StubBackend::new(Lexicon::builtin());
        pairs.iter().map(|(p, s)| stub.stub_generate(p, None, *s).content_digest).collect::<Vec<_>>()
    };
    let (first, second) = (run(), run());
    let diverged = first.iter().zip(&second).filter(|(a, b)| a != b).count();
    ensure(diverged == 0, || format!("{diverged} digests diverged"))?;
    let distinct: BTreeSet<&String> = first.iter().collect();
    ensure(distinct.len() == STUB_PAIRS, || format!("only {} distinct digests", distinct.len()))?;
    Ok(format!("{STUB_PAIRS} pairs twice, 0 divergence"))
}

fn main() {
    let checks: [(&str, fn() -> Check); 9] = [
        ("scoring matrix", scoring_matrix),
        ("rule constants", rule_constants),
        ("vote-tally oracle", vote_tally_oracle),
        ("questionnaire shift tables", shift_tables),
        ("caption validation", validation_vectors),
        ("replay determinism", replay_determinism),
        ("redaction fuzz", redaction_fuzz),
        ("agent uniformity", uniformity),
        ("stub determinism", stub_determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
