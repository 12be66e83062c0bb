use std::collections::BTreeSet;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imagegen::Lexicon;
use crate::rules::{BanList, Phase, Side};
use crate::session::{ClientMessage, PodView, Snapshot};

/// Words with no lexicon weight, used by Random bots as filler.
const NEUTRAL: &[&str] = &[
    "smiling", "working", "together", "outdoors", "portrait", "group", "photo", "bright",
    "busy", "morning", "team", "city", "standing", "talking", "modern", "friendly",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BotPolicy {
    Honest,
    Saboteur,
    Random,
}

impl FromStr for BotPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "honest" => Ok(BotPolicy::Honest),
            "saboteur" => Ok(BotPolicy::Saboteur),
            "random" => Ok(BotPolicy::Random),
            other => Err(format!("unknown bot policy \"{other}\"")),
        }
    }
}

/// Which policy each kind of participant follows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    pub players: BotPolicy,
    pub agent: BotPolicy,
    pub evaluators: BotPolicy,
    /// Chance that an Honest or Saboteur judgement is replaced by a coin flip.
    pub noise: f64,
    /// Chance that a Random bot sits out its composition turn.
    pub idle: f64,
}

impl Profile {
    pub fn preset(name: &str) -> Option<Profile> {
        let (players, agent, evaluators, noise, idle) = match name {
            "default" => (BotPolicy::Honest, BotPolicy::Saboteur, BotPolicy::Honest, 0.1, 0.0),
            "all-honest" => (BotPolicy::Honest, BotPolicy::Honest, BotPolicy::Honest, 0.1, 0.0),
            "all-random" => (BotPolicy::Random, BotPolicy::Random, BotPolicy::Random, 0.5, 0.05),
            _ => return None,
        };
        Some(Profile { name: name.into(), players, agent, evaluators, noise, idle })
    }

    /// `preset[,key=value...]` or just `key=value,...` over the default preset.
    /// Keys: players, agent, evaluators, noise, idle.
    pub fn parse(spec: &str) -> Result<Profile, String> {
        let mut parts = spec.split(',').map(str::trim).filter(|p| !p.is_empty()).peekable();
        let mut profile = match parts.peek() {
            Some(first) if !first.contains('=') => {
                let p = Profile::preset(first).ok_or_else(|| format!("unknown profile \"{first}\""))?;
                parts.next();
                p
            }
            _ => Profile::preset("default").expect("default preset"),
        };
        for part in parts {
            let (key, value) = part.split_once('=').ok_or_else(|| format!("expected key=value, got \"{part}\""))?;
            let value = value.trim();
            let prob = || match value.parse::<f64>() {
                Ok(p) if (0.0..=1.0).contains(&p) => Ok(p),
                _ => Err(format!("{key} must be a probability in [0, 1]")),
            };
            match key.trim() {
                "players" => profile.players = value.parse()?,
                "agent" => profile.agent = value.parse()?,
                "evaluators" => profile.evaluators = value.parse()?,
                "noise" => profile.noise = prob()?,
                "idle" => profile.idle = prob()?,
                other => return Err(format!("unknown profile key \"{other}\"")),
            }
        }
        profile.name = spec.trim().to_string();
        Ok(profile)
    }
}

pub(crate) struct WordPools {
    diversity: Vec<String>,
    bias: Vec<String>,
    any: Vec<String>,
}

impl WordPools {
    pub(crate) fn new(lexicon: &Lexicon, ban: &BanList) -> Self {
        let keep = |set: &BTreeSet<String>| -> Vec<String> { set.iter().filter(|w| !ban.contains(w)).cloned().collect() };
        let diversity = keep(&lexicon.diversity);
        let bias = keep(&lexicon.bias);
        let mut any: Vec<String> = diversity.iter().chain(bias.iter()).cloned().collect();
        any.extend(NEUTRAL.iter().map(|w| w.to_string()).filter(|w| !ban.contains(w)));
        WordPools { diversity, bias, any }
    }
}

pub(crate) struct Bot {
    pub policy_if_agent: BotPolicy,
    pub policy: BotPolicy,
    pub rng: ChaCha8Rng,
}

fn pick(rng: &mut ChaCha8Rng, pool: &[String], n: usize) -> Vec<String> {
    (0..n).filter_map(|_| pool.choose(rng).cloned()).collect()
}

impl Bot {
    fn effective(&self, snap: &Snapshot) -> BotPolicy {
        if snap.you_are_agent {
            self.policy_if_agent
        } else {
            self.policy
        }
    }

    fn flip(&mut self, noise: f64, judged: bool) -> bool {
        if self.rng.random_bool(noise) {
            self.rng.random_bool(0.5)
        } else {
            judged
        }
    }

    fn words(&mut self, policy: BotPolicy, pools: &WordPools, n: usize) -> String {
        let pool = match policy {
            BotPolicy::Honest => &pools.diversity,
            BotPolicy::Saboteur => &pools.bias,
            BotPolicy::Random => &pools.any,
        };
        pick(&mut self.rng, pool, n).join(" ")
    }

    /// The next message this bot sends, if any.
    pub(crate) fn act(&mut self, snap: &Snapshot, pools: &WordPools, lexicon: &Lexicon, profile: &Profile) -> Option<ClientMessage> {
        if !snap.evaluations.is_empty() {
            if let Some(task) = snap.evaluations.iter().find(|t| !t.you_voted) {
                let scores = task.pseudo_scores.unwrap_or_default();
                let (represents, diverse) = match self.policy {
                    BotPolicy::Random => (self.rng.random_bool(0.5), self.rng.random_bool(0.5)),
                    _ => (self.flip(profile.noise, scores.category_match > 0), self.flip(profile.noise, scores.diversity_cue > 0)),
                };
                return Some(ClientMessage::CastEvalVote { pod: Some(task.pod), represents, diverse });
            }
        }
        let view = snap.pod.as_ref()?;
        let me = view.your_seat?;
        let policy = self.effective(snap);
        match view.phase {
            Phase::Lobby => (!view.members[me - 1].ready).then_some(ClientMessage::Ready),
            Phase::RoundSetup => (me == view.round % view.members.len() + 1).then_some(ClientMessage::DrawCard),
            Phase::PromptComposition => self.compose(view, me, policy, pools, profile),
            Phase::ImageSelection => self.select(view, me, policy, pools),
            Phase::PeerVoting => {
                let ballot = view.ballot.as_ref()?;
                if ballot.you_voted {
                    return None;
                }
                let choice = match policy {
                    BotPolicy::Random => *[Side::A, Side::B].choose(&mut self.rng).expect("two sides"),
                    _ => {
                        let cue = |side| {
                            let attempt = view.selected.get(&side)?;
                            view.attempts.iter().find(|a| a.pair == Some(side) && a.attempt == *attempt)?.pseudo_scores
                        };
                        let a = cue(Side::A).map_or(0, |s| s.diversity_cue);
                        let b = cue(Side::B).map_or(0, |s| s.diversity_cue);
                        let judged = match a.cmp(&b) {
                            std::cmp::Ordering::Greater => true,
                            std::cmp::Ordering::Less => false,
                            std::cmp::Ordering::Equal => self.rng.random_bool(0.5),
                        };
                        if self.flip(profile.noise, judged) { Side::A } else { Side::B }
                    }
                };
                Some(ClientMessage::CastImageVote { choice })
            }
            Phase::Accusation => {
                if view.ballot.as_ref()?.you_voted {
                    return None;
                }
                Some(ClientMessage::CastAccusation { seat: self.accuse(view, me, policy, lexicon, profile) })
            }
            Phase::RoundResult => (me == 1).then_some(ClientMessage::Ready),
            _ => None,
        }
    }

    fn compose(&mut self, view: &PodView, me: usize, policy: BotPolicy, pools: &WordPools, profile: &Profile) -> Option<ClientMessage> {
        if let Some(per_turn) = view.words_per_turn {
            if view.active_seat != Some(me) {
                return None;
            }
            if policy == BotPolicy::Random && self.rng.random_bool(profile.idle) {
                return None;
            }
            let n = match policy {
                BotPolicy::Random => self.rng.random_range(0..=per_turn),
                _ => per_turn,
            };
            let text = self.words(policy, pools, n);
            return Some(ClientMessage::SubmitWords { text, submit: true });
        }
        let limit = view.word_limit?;
        let my_pair = view.members[me - 1].pair;
        let draft = view.drafts.iter().find(|d| d.pair == my_pair)?;
        let leader = view.members.iter().find(|m| m.pair == my_pair).map(|m| m.seat);
        if draft.submitted || leader != Some(me) {
            return None;
        }
        if policy == BotPolicy::Random && self.rng.random_bool(profile.idle) {
            return None;
        }
        let n = match policy {
            BotPolicy::Random => self.rng.random_range(1..=limit),
            _ => limit,
        };
        let text = self.words(policy, pools, n);
        Some(ClientMessage::SubmitWords { text, submit: true })
    }

    fn select(&mut self, view: &PodView, me: usize, policy: BotPolicy, pools: &WordPools) -> Option<ClientMessage> {
        let my_pair = view.members[me - 1].pair;
        let leader = view.members.iter().find(|m| m.pair == my_pair).map(|m| m.seat);
        if leader != Some(me) || view.selected.contains_key(&my_pair?) {
            return None;
        }
        let mine: Vec<_> = view.attempts.iter().filter(|a| a.pair == my_pair).collect();
        if mine.iter().any(|a| a.digest.is_none()) {
            return None;
        }
        let left = view.attempts_left.unwrap_or(0);
        let best = mine.iter().max_by_key(|a| (a.pseudo_scores.map_or(0, |s| s.diversity_cue), std::cmp::Reverse(a.attempt)))?;
        let retry = match policy {
            BotPolicy::Random => left > 0 && self.rng.random_bool(0.5),
            _ => left > 0 && best.pseudo_scores.is_some_and(|s| s.diversity_cue <= 0),
        };
        if retry {
            let n = view.word_limit.unwrap_or(1).max(1);
            return Some(ClientMessage::RequestAttempt { text: self.words(policy, pools, n) });
        }
        let attempt = match policy {
            BotPolicy::Random => mine.choose(&mut self.rng)?.attempt,
            _ => best.attempt,
        };
        Some(ClientMessage::SelectImage { attempt })
    }

    /// Seat of the player whose words most lowered the diversity cue.
    fn accuse(&mut self, view: &PodView, me: usize, policy: BotPolicy, lexicon: &Lexicon, profile: &Profile) -> usize {
        let others: Vec<usize> = view.members.iter().map(|m| m.seat).filter(|s| *s != me).collect();
        if policy == BotPolicy::Random || self.rng.random_bool(profile.noise) {
            return *others.choose(&mut self.rng).expect("three other seats");
        }
        let words = view.drafts.first().map(|d| d.words.as_slice()).unwrap_or(&[]);
        let cue = |seat: usize| {
            let own: Vec<&str> = words.iter().filter(|w| w.seat == Some(seat)).map(|w| w.word.as_str()).collect();
            lexicon.word_cue(&own)
        };
        let lowest = others.iter().map(|s| cue(*s)).min().unwrap_or(0);
        let suspects: Vec<usize> = others.into_iter().filter(|s| cue(*s) == lowest).collect();
        *suspects.choose(&mut self.rng).expect("at least one suspect")
    }
}

/// A bot usable outside the simulator, e.g. behind a real socket.
pub struct BotClient {
    bot: Bot,
    pools: WordPools,
    lexicon: Lexicon,
    profile: Profile,
}

impl BotClient {
    /// `evaluator` bots follow the profile's evaluator policy.
    pub fn new(profile: Profile, evaluator: bool, ban: &BanList, seed: u64) -> Self {
        use rand::SeedableRng;
        let (policy, policy_if_agent) =
            if evaluator { (profile.evaluators, profile.evaluators) } else { (profile.players, profile.agent) };
        let lexicon = Lexicon::builtin();
        BotClient {
            bot: Bot { policy, policy_if_agent, rng: ChaCha8Rng::seed_from_u64(seed) },
            pools: WordPools::new(&lexicon, ban),
            lexicon,
            profile,
        }
    }

    pub fn act(&mut self, snapshot: &Snapshot) -> Option<ClientMessage> {
        self.bot.act(snapshot, &self.pools, &self.lexicon, &self.profile)
    }
}
