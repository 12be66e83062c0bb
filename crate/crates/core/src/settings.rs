//! Line-based `key = value` settings file.
//!
//! ```text
//! # comments and blank lines are ignored
//! dd.word_limits = 6,5,4
//! sa.turn_seconds = 30
//! session.pods = 2
//! imagegen.backend = stub
//! ```
//!
//! `dd.` and `sa.` keys are [`GameConfig`] field names; `points.full_win` and
//! friends reach into the nested score table.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::imagegen::{
    Backend, BodyFormat, GatewayConfigError, HttpBackend, ImageGateway, Lexicon, StubBackend,
    DEFAULT_TIMEOUT,
};
use crate::rules::{
    AccusationRule, AgentReassignment, BanList, GameConfig, GameKind, TiePolicy,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SettingError {
    /// 1-based line, or 0 when the problem is not tied to one line.
    pub line: usize,
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for SettingError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.line > 0 {
            write!(f, "line {}: {}: {}", self.line, self.key, self.message)
        } else {
            write!(f, "{}: {}", self.key, self.message)
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SettingsError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<SettingError>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Stub,
    Http,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagegenSettings {
    pub backend: BackendKind,
    pub url: String,
    pub body: BodyFormat,
    pub lexicon: Option<PathBuf>,
    pub max_in_flight: usize,
    pub min_interval_ms: u64,
    pub timeout_seconds: u64,
}

impl Default for ImagegenSettings {
    fn default() -> Self {
        ImagegenSettings {
            backend: BackendKind::Stub,
            url: String::new(),
            body: BodyFormat::Form,
            lexicon: None,
            max_in_flight: 4,
            min_interval_ms: 0,
            timeout_seconds: DEFAULT_TIMEOUT.as_secs(),
        }
    }
}

impl ImagegenSettings {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_seconds)
    }

    pub fn load_lexicon(&self) -> Result<Lexicon, SettingsError> {
        let Some(path) = &self.lexicon else {
            return Ok(Lexicon::builtin());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|source| SettingsError::Io { path: path.clone(), source })?;
        Lexicon::parse(&text).map_err(|e| {
            SettingsError::Invalid(vec![SettingError { line: 0, key: "imagegen.lexicon".into(), message: e.to_string() }])
        })
    }

    /// Builds the gateway; the HTTP backend reads its key from the environment here.
    pub fn gateway(&self) -> Result<ImageGateway, SettingsError> {
        let backend = match self.backend {
            BackendKind::Stub => Backend::Stub(StubBackend::new(self.load_lexicon()?)),
            BackendKind::Http => {
                let mut http = HttpBackend::from_env(&self.url).map_err(|e| {
                    let key = match e {
                        GatewayConfigError::MissingUrl => "imagegen.url",
                        GatewayConfigError::MissingApiKey(_) => "imagegen.backend",
                    };
                    SettingsError::Invalid(vec![SettingError { line: 0, key: key.into(), message: e.to_string() }])
                })?;
                http.body = self.body;
                Backend::Http(http)
            }
        };
        Ok(ImageGateway::new(backend, self.max_in_flight, Duration::from_millis(self.min_interval_ms)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub dd: GameConfig,
    pub sa: GameConfig,
    pub pods: usize,
    pub imagegen: ImagegenSettings,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            dd: GameConfig::diversity_duel(),
            sa: GameConfig::secret_agent(),
            pods: 1,
            imagegen: ImagegenSettings::default(),
        }
    }
}

fn list(value: &str) -> Vec<String> {
    value.split(',').map(|s| unquote(s.trim()).to_string()).filter(|s| !s.is_empty()).collect()
}

fn unquote(s: &str) -> &str {
    s.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(s)
}

fn num<T: FromStr>(value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("expected a non-negative integer, got \"{value}\""))
}

fn boolean(value: &str) -> Result<bool, String> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got \"{value}\"")),
    }
}

fn choice<T: Copy>(value: &str, options: &[(&str, T)]) -> Result<T, String> {
    let wanted = value.to_ascii_lowercase().replace('-', "_");
    options.iter().find(|(name, _)| *name == wanted).map(|(_, v)| *v).ok_or_else(|| {
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        format!("expected one of {}, got \"{value}\"", names.join(", "))
    })
}

fn set_game_field(config: &mut GameConfig, field: &str, value: &str) -> Result<(), String> {
    match field {
        "rounds" => config.rounds = num(value)?,
        "word_limits" => config.word_limits = list(value).iter().map(|v| num(v)).collect::<Result<_, _>>()?,
        "compose_seconds" => config.compose_seconds = num(value)?,
        "turn_seconds" => config.turn_seconds = num(value)?,
        "words_per_turn" => config.words_per_turn = num(value)?,
        "passes" => config.passes = num(value)?,
        "max_attempts" => config.max_attempts = num(value)?,
        "select_seconds" => config.select_seconds = num(value)?,
        "vote_seconds" => config.vote_seconds = num(value)?,
        "ban_list" => config.ban_list = BanList::new(list(value)),
        "card_deck" => config.card_deck = list(value),
        "secret_agent_categories" => config.secret_agent_categories = list(value),
        "image_vote_tie_policy" => {
            config.image_vote_tie_policy = choice(value, &[("draw", TiePolicy::Draw), ("revote", TiePolicy::Revote)])?
        }
        "accusation_rule" => {
            config.accusation_rule = choice(
                value,
                &[("plurality", AccusationRule::Plurality), ("strict_majority", AccusationRule::StrictMajority)],
            )?
        }
        "agent_reassignment" => {
            config.agent_reassignment = choice(
                value,
                &[("per_round", AgentReassignment::PerRound), ("per_game", AgentReassignment::PerGame)],
            )?
        }
        "category_is_prefix" => config.category_is_prefix = boolean(value)?,
        "points.full_win" => config.points.full_win = num(value)?,
        "points.partial_win" => config.points.partial_win = num(value)?,
        "points.loss" => config.points.loss = num(value)?,
        _ => return Err("unknown key".into()),
    }
    Ok(())
}

impl Settings {
    pub fn game(&self, kind: GameKind) -> &GameConfig {
        match kind {
            GameKind::DiversityDuel => &self.dd,
            GameKind::SecretAgent => &self.sa,
        }
    }

    pub fn load(path: &Path) -> Result<Settings, SettingsError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| SettingsError::Io { path: path.to_path_buf(), source })?;
        Settings::parse(&text)
    }

    /// Parses and validates; every bad line is reported, not just the first.
    pub fn parse(text: &str) -> Result<Settings, SettingsError> {
        let mut settings = Settings::default();
        let mut errors = Vec::new();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                errors.push(SettingError { line, key: content.into(), message: "expected key = value".into() });
                continue;
            };
            let key = key.trim().to_string();
            let value = value.trim();
            if let Some(first) = seen.insert(key.clone(), line) {
                errors.push(SettingError { line, key, message: format!("already set on line {first}") });
                continue;
            }
            if let Err(message) = settings.set(&key, value) {
                errors.push(SettingError { line, key, message });
            }
        }
        for (prefix, config) in [("dd", &settings.dd), ("sa", &settings.sa)] {
            if let Err(bad) = config.validate() {
                for e in bad.0 {
                    let key = format!("{prefix}.{}", e.field);
                    let line = seen.get(&key).copied().unwrap_or(0);
                    errors.push(SettingError { line, key, message: e.message });
                }
            }
        }
        if settings.pods == 0 {
            let line = seen.get("session.pods").copied().unwrap_or(0);
            errors.push(SettingError { line, key: "session.pods".into(), message: "must be at least 1".into() });
        }
        if settings.imagegen.backend == BackendKind::Http && settings.imagegen.url.is_empty() {
            let line = seen.get("imagegen.backend").copied().unwrap_or(0);
            errors.push(SettingError { line, key: "imagegen.url".into(), message: "required by the http backend".into() });
        }
        if errors.is_empty() {
            Ok(settings)
        } else {
            errors.sort_by_key(|e| e.line);
            Err(SettingsError::Invalid(errors))
        }
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let (section, field) = key.split_once('.').ok_or("unknown key")?;
        match section {
            "dd" => set_game_field(&mut self.dd, field, value),
            "sa" => set_game_field(&mut self.sa, field, value),
            "session" => match field {
                "pods" => {
                    self.pods = num(value)?;
                    Ok(())
                }
                _ => Err("unknown key".into()),
            },
            "imagegen" => {
                let g = &mut self.imagegen;
                match field {
                    "backend" => g.backend = choice(value, &[("stub", BackendKind::Stub), ("http", BackendKind::Http)])?,
                    "url" => g.url = unquote(value).to_string(),
                    "body" => g.body = choice(value, &[("form", BodyFormat::Form), ("json", BodyFormat::Json)])?,
                    "lexicon" => g.lexicon = Some(PathBuf::from(unquote(value))),
                    "max_in_flight" => g.max_in_flight = num(value)?,
                    "min_interval_ms" => g.min_interval_ms = num(value)?,
                    "timeout_seconds" => g.timeout_seconds = num(value)?,
                    _ => return Err("unknown key".into()),
                }
                Ok(())
            }
            _ => Err("unknown key".into()),
        }
    }
}
