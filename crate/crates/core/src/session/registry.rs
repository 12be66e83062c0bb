use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Session, SessionError, SessionOptions};
use crate::rules::{ConfigErrors, GameConfig};

pub const CODE_ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
pub const CODE_LEN: usize = 6;

pub fn generate_code(rng: &mut impl Rng) -> String {
    (0..CODE_LEN)
        .map(|_| CODE_ALPHABET[rng.random_range(0..CODE_ALPHABET.len())] as char)
        .collect()
}

pub fn is_room_code(code: &str) -> bool {
    code.len() == CODE_LEN && code.bytes().all(|b| CODE_ALPHABET.contains(&b))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Created {
    pub code: String,
    pub facilitator_token: String,
    pub seed: u64,
}

/// Live sessions keyed by room code. Codes, tokens and session seeds all
/// come from one seeded generator.
#[derive(Debug)]
pub struct SessionRegistry {
    rng: ChaCha8Rng,
    sessions: BTreeMap<String, Session>,
}

impl SessionRegistry {
    pub fn new(seed: u64) -> Self {
        SessionRegistry { rng: ChaCha8Rng::seed_from_u64(seed), sessions: BTreeMap::new() }
    }

    /// Draws a fresh code, token and seed without registering anything.
    pub fn reserve(&mut self) -> Created {
        let code = loop {
            let code = generate_code(&mut self.rng);
            if !self.sessions.contains_key(&code) {
                break code;
            }
        };
        let facilitator_token = format!("{:016x}{:016x}", self.rng.next_u64(), self.rng.next_u64());
        Created { code, facilitator_token, seed: self.rng.next_u64() }
    }

    pub fn create(&mut self, config: GameConfig, pods: usize, now: u64) -> Result<Created, ConfigErrors> {
        let created = self.reserve();
        let options = SessionOptions { pods, facilitator_token: created.facilitator_token.clone(), seed: created.seed };
        let session = Session::create(created.code.clone(), config, options, now)?;
        self.sessions.insert(created.code.clone(), session);
        Ok(created)
    }

    pub fn insert(&mut self, session: Session) {
        self.sessions.insert(session.code().to_string(), session);
    }

    pub fn get(&self, code: &str) -> Result<&Session, SessionError> {
        self.sessions.get(code).ok_or_else(|| SessionError::NotFound(code.into()))
    }

    pub fn get_mut(&mut self, code: &str) -> Result<&mut Session, SessionError> {
        self.sessions.get_mut(code).ok_or_else(|| SessionError::NotFound(code.into()))
    }

    pub fn remove(&mut self, code: &str) -> Option<Session> {
        self.sessions.remove(code)
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.sessions.keys().map(String::as_str)
    }
}
